"""Synthetic database schemas with per-column statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvariantError, ParseError

PROFILES = ("tiny", "small", "tpch_like")


@dataclass(frozen=True)
class ColumnStats:
    name: str
    width_bytes: int
    distinct_fraction: float
    selectivity_eq: float
    selectivity_range: float

    def selectivity(self, kind: str) -> float:
        return self.selectivity_eq if kind == "eq" else self.selectivity_range


@dataclass(frozen=True)
class TableStats:
    name: str
    row_count: int
    columns: tuple[ColumnStats, ...]

    def column(self, name: str) -> ColumnStats:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(f"unknown column {self.name}.{name}")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)


@dataclass(frozen=True)
class SchemaStats:
    tables: tuple[TableStats, ...]
    seed: int = 0

    def __post_init__(self):
        validate_schema(self)

    def table(self, name: str) -> TableStats:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(f"unknown table {name}")

    def has_column(self, table: str, column: str) -> bool:
        try:
            self.table(table).column(column)
        except KeyError:
            return False
        return True

    def all_columns(self) -> list[tuple[str, str]]:
        """(table, column) pairs in declaration order."""
        return [(t.name, c.name) for t in self.tables for c in t.columns]


def validate_schema(schema: SchemaStats) -> None:
    names = [t.name for t in schema.tables]
    if len(set(names)) != len(names):
        raise InvariantError("table names must be unique")
    for t in schema.tables:
        if t.row_count < 1:
            raise InvariantError(f"table {t.name}: row_count must be >= 1")
        cols = [c.name for c in t.columns]
        if len(set(cols)) != len(cols):
            raise InvariantError(f"table {t.name}: column names must be unique")
        for c in t.columns:
            where = f"column {t.name}.{c.name}"
            if c.width_bytes < 1:
                raise InvariantError(f"{where}: width_bytes must be >= 1")
            if not 0.0 < c.distinct_fraction <= 1.0:
                raise InvariantError(f"{where}: distinct_fraction must be in (0, 1]")
            for attr in ("selectivity_eq", "selectivity_range"):
                v = getattr(c, attr)
                if not 0.0 < v <= 1.0:
                    raise InvariantError(f"{where}: {attr} must be in (0, 1]")
            if c.selectivity_eq > c.selectivity_range:
                raise InvariantError(f"{where}: selectivity_eq must be <= selectivity_range")


# TPC-H tables with SF1 cardinalities; scaled so lineitem has 10^6 rows.
# Column widths are inflated (x4) so that 2-8 unit budgets bind at this scale.
_TPCH_TABLES = [
    ("lineitem", 6_001_215, [
        ("l_orderkey", 8), ("l_partkey", 8), ("l_suppkey", 8), ("l_quantity", 8),
        ("l_extendedprice", 8), ("l_discount", 8), ("l_shipdate", 4), ("l_returnflag", 1),
    ]),
    ("orders", 1_500_000, [
        ("o_orderkey", 8), ("o_custkey", 8), ("o_orderstatus", 1), ("o_totalprice", 8),
        ("o_orderdate", 4), ("o_orderpriority", 15),
    ]),
    ("partsupp", 800_000, [
        ("ps_partkey", 8), ("ps_suppkey", 8), ("ps_availqty", 4), ("ps_supplycost", 8),
    ]),
    ("part", 200_000, [
        ("p_partkey", 8), ("p_brand", 10), ("p_type", 25), ("p_size", 4), ("p_container", 10),
    ]),
    ("customer", 150_000, [
        ("c_custkey", 8), ("c_nationkey", 8), ("c_acctbal", 8), ("c_mktsegment", 10),
    ]),
    ("supplier", 10_000, [
        ("s_suppkey", 8), ("s_nationkey", 8), ("s_acctbal", 8),
    ]),
    ("nation", 25, [("n_nationkey", 8), ("n_regionkey", 8), ("n_name", 25)]),
    ("region", 5, [("r_regionkey", 8), ("r_name", 25)]),
]
TPCH_MAX_ROWS = 1_000_000
TPCH_WIDTH_SCALE = 4


def tpch_row_counts() -> dict[str, int]:
    scale = TPCH_MAX_ROWS / _TPCH_TABLES[0][1]
    return {name: max(1, round(rows * scale)) for name, rows, _ in _TPCH_TABLES}


def _column_stats(rng: np.random.Generator, name: str, width: int, rows: int) -> ColumnStats:
    distinct = float(np.exp(rng.uniform(np.log(max(1.0 / rows, 1e-4)), 0.0)))
    sel_eq = float(np.exp(rng.uniform(np.log(1e-3), np.log(0.5))))
    sel_range = sel_eq + (1.0 - sel_eq) * float(rng.uniform(0.02, 0.3))
    return ColumnStats(
        name=name,
        width_bytes=int(width),
        distinct_fraction=round(distinct, 6) or 1e-6,
        selectivity_eq=round(sel_eq, 6),
        selectivity_range=round(min(1.0, sel_range), 6),
    )


# (table count, max columns, row-count range, width choices)
_SYNTHETIC = {
    "tiny": (3, 4, (1_000, 10_000), (1024, 2048, 4096, 8192)),
    "small": (5, 6, (5_000, 100_000), (128, 256, 512, 1024)),
}


def generate_schema(profile: str, seed: int) -> SchemaStats:
    """Build a reproducible schema for ``profile`` (tiny, small or tpch_like)."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    rng = np.random.default_rng(seed)
    tables = []
    if profile == "tpch_like":
        rows = tpch_row_counts()
        for name, _, cols in _TPCH_TABLES:
            n = rows[name]
            tables.append(TableStats(
                name, n,
                tuple(_column_stats(rng, c, w * TPCH_WIDTH_SCALE, n) for c, w in cols),
            ))
        return SchemaStats(tuple(tables), seed)

    n_tables, max_cols, (lo, hi), widths = _SYNTHETIC[profile]
    for ti in range(n_tables):
        name = f"t{ti}"
        n_rows = int(rng.integers(lo, hi + 1))
        n_cols = int(rng.integers(2, max_cols + 1))
        cols = tuple(
            _column_stats(rng, f"{name}_c{ci}", int(rng.choice(widths)), n_rows)
            for ci in range(n_cols)
        )
        tables.append(TableStats(name, n_rows, cols))
    return SchemaStats(tuple(tables), seed)


def schema_to_dict(schema: SchemaStats) -> dict:
    return {
        "seed": schema.seed,
        "tables": [
            {
                "name": t.name,
                "row_count": t.row_count,
                "columns": [
                    {
                        "name": c.name,
                        "width_bytes": c.width_bytes,
                        "distinct_fraction": c.distinct_fraction,
                        "selectivity_eq": c.selectivity_eq,
                        "selectivity_range": c.selectivity_range,
                    }
                    for c in t.columns
                ],
            }
            for t in schema.tables
        ],
    }


def _field(obj: dict, key: str, kind, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ParseError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def schema_from_dict(data: dict) -> SchemaStats:
    seed = _field(data, "seed", int, "schema")
    raw_tables = _field(data, "tables", list, "schema")
    tables = []
    for ti, t in enumerate(raw_tables):
        where = f"tables[{ti}]"
        cols = []
        for ci, c in enumerate(_field(t, "columns", list, where)):
            cw = f"{where}.columns[{ci}]"
            cols.append(ColumnStats(
                name=_field(c, "name", str, cw),
                width_bytes=_field(c, "width_bytes", int, cw),
                distinct_fraction=_field(c, "distinct_fraction", float, cw),
                selectivity_eq=_field(c, "selectivity_eq", float, cw),
                selectivity_range=_field(c, "selectivity_range", float, cw),
            ))
        tables.append(TableStats(
            _field(t, "name", str, where), _field(t, "row_count", int, where), tuple(cols)
        ))
    return SchemaStats(tuple(tables), seed)


def _read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_schema(path) -> SchemaStats:
    return schema_from_dict(_read_json(path))


def save_schema(schema: SchemaStats, path) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(schema), indent=2) + "\n")
