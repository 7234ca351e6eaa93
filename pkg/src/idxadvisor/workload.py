"""Frequency-weighted query workloads and their state featurization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionError, InvariantError, ParseError
from .schema import SchemaStats, _field, _read_json

if TYPE_CHECKING:
    from .candidates import CandidatePool
    from .costmodel import CostReport, CostSource, IndexConfiguration

PREDICATE_KINDS = ("eq", "range")
DEFAULT_Q_MAX = 64


@dataclass(frozen=True)
class TableRef:
    """One table touched by a query: its predicates and projected columns."""

    table: str
    predicates: tuple[tuple[str, str], ...]
    payload: frozenset[str] = frozenset()

    @property
    def predicate_columns(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.predicates)

    @property
    def referenced(self) -> frozenset[str]:
        return frozenset(self.predicate_columns) | self.payload


@dataclass(frozen=True)
class Query:
    id: str
    tables: tuple[TableRef, ...]
    frequency: float = 1.0

    @property
    def table_refs(self) -> frozenset[str]:
        return frozenset(t.table for t in self.tables)

    def ref(self, table: str) -> TableRef | None:
        for t in self.tables:
            if t.table == table:
                return t
        return None


@dataclass(frozen=True)
class Workload:
    queries: tuple[Query, ...]
    name: str = "workload"

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def total_frequency(self) -> float:
        return sum(q.frequency for q in self.queries)

    def scaled(self, factor: float) -> Workload:
        return Workload(
            tuple(Query(q.id, q.tables, q.frequency * factor) for q in self.queries), self.name
        )


def validate_workload(workload: Workload, schema: SchemaStats | None = None) -> None:
    ids = [q.id for q in workload.queries]
    if len(set(ids)) != len(ids):
        raise InvariantError("query ids must be unique")
    if not workload.queries or workload.total_frequency <= 0:
        raise InvariantError("total frequency must be > 0")
    for q in workload.queries:
        if not q.frequency > 0:
            raise InvariantError(f"query {q.id}: frequency must be positive")
        if not any(t.predicates for t in q.tables):
            raise InvariantError(f"query {q.id}: needs at least one predicate column")
        seen_tables = set()
        for t in q.tables:
            if t.table in seen_tables:
                raise InvariantError(f"query {q.id}: table {t.table} referenced twice")
            seen_tables.add(t.table)
            cols = t.predicate_columns
            if len(set(cols)) != len(cols):
                raise InvariantError(f"query {q.id}: duplicate predicate column on {t.table}")
            for _, kind in t.predicates:
                if kind not in PREDICATE_KINDS:
                    raise InvariantError(f"query {q.id}: unknown predicate kind {kind!r}")
            if schema is not None:
                for c in t.referenced:
                    if not schema.has_column(t.table, c):
                        raise InvariantError(
                            f"query {q.id}: unknown column {t.table}.{c}"
                        )


def generate_workload(
    schema: SchemaStats,
    template_count: int,
    queries_per_workload: int,
    seed: int,
    name: str | None = None,
) -> Workload:
    """Draw ``queries_per_workload`` queries from ``template_count`` random templates.

    Query complexity (tables per query, columns per table) grows with
    ``template_count``. Query ``i`` instantiates template ``i % template_count``
    with a log-normally perturbed frequency.
    """
    if template_count < 1 or queries_per_workload < 1:
        raise ValueError("template_count and queries_per_workload must be positive")
    if template_count > queries_per_workload:
        raise ValueError("template_count must not exceed queries_per_workload")
    rng = np.random.default_rng(seed)
    max_tables = min(len(schema.tables), 1 + template_count // 6)
    max_preds = 1 + template_count // 8
    max_payload = 1 + template_count // 5

    templates = []
    for _ in range(template_count):
        n_tables = int(rng.integers(1, max_tables + 1))
        picked = sorted(rng.choice(len(schema.tables), size=n_tables, replace=False))
        refs = []
        for ti in picked:
            table = schema.tables[ti]
            names = list(table.column_names)
            order = rng.permutation(len(names))
            n_pred = int(rng.integers(1, min(max_preds, len(names)) + 1))
            preds = tuple(
                (names[i], PREDICATE_KINDS[int(rng.integers(0, 2))]) for i in order[:n_pred]
            )
            rest = [names[i] for i in order[n_pred:]]
            n_pay = int(rng.integers(0, min(max_payload, len(rest)) + 1))
            payload = frozenset(rest[:n_pay])
            refs.append(TableRef(table.name, preds, payload))
        templates.append((tuple(refs), float(rng.uniform(1.0, 10.0))))

    queries = []
    for i in range(queries_per_workload):
        refs, base = templates[i % template_count]
        freq = round(base * float(np.exp(rng.normal(0.0, 0.25))), 6)
        queries.append(Query(f"q{i}", refs, freq))
    workload = Workload(tuple(queries), name or f"w_t{template_count}_s{seed}")
    validate_workload(workload, schema)
    return workload


def workload_to_dict(workload: Workload) -> dict:
    return {
        "name": workload.name,
        "queries": [
            {
                "id": q.id,
                "frequency": q.frequency,
                "tables": [
                    {
                        "table": t.table,
                        "predicates": [{"column": c, "kind": k} for c, k in t.predicates],
                        "payload": sorted(t.payload),
                    }
                    for t in q.tables
                ],
            }
            for q in workload.queries
        ],
    }


def workload_from_dict(data: dict, schema: SchemaStats | None = None,
                       allow_empty: bool = False) -> Workload:
    """Parse and validate; ``allow_empty`` accepts a file with no queries."""
    name = _field(data, "name", str, "workload")
    queries = []
    for qi, q in enumerate(_field(data, "queries", list, "workload")):
        where = f"queries[{qi}]"
        refs = []
        for ti, t in enumerate(_field(q, "tables", list, where)):
            tw = f"{where}.tables[{ti}]"
            preds = tuple(
                (_field(p, "column", str, f"{tw}.predicates[{pi}]"),
                 _field(p, "kind", str, f"{tw}.predicates[{pi}]"))
                for pi, p in enumerate(_field(t, "predicates", list, tw))
            )
            payload = t.get("payload", [])
            if not isinstance(payload, list) or not all(isinstance(c, str) for c in payload):
                raise ParseError(f"{tw}: field 'payload' must be a list of column names")
            refs.append(TableRef(_field(t, "table", str, tw), preds, frozenset(payload)))
        queries.append(Query(
            _field(q, "id", str, where), tuple(refs), _field(q, "frequency", float, where)
        ))
    workload = Workload(tuple(queries), name)
    if not (allow_empty and not queries):
        validate_workload(workload, schema)
    return workload


def load_workload(path, schema: SchemaStats | None = None, allow_empty: bool = False) -> Workload:
    return workload_from_dict(_read_json(path), schema, allow_empty)


def save_workload(workload: Workload, path) -> None:
    Path(path).write_text(json.dumps(workload_to_dict(workload), indent=2) + "\n")


@dataclass(frozen=True)
class StateVector:
    plan_features: np.ndarray
    config_bits: np.ndarray
    meta: np.ndarray
    query_embedding: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [self.plan_features, self.config_bits, self.meta, self.query_embedding]
        )

    def __len__(self) -> int:
        return sum(len(p) for p in (self.plan_features, self.config_bits, self.meta,
                                    self.query_embedding))


def query_embedding(workload: Workload, schema: SchemaStats) -> np.ndarray:
    """Per schema column: frequency share of predicate use, then of payload use."""
    cols = schema.all_columns()
    pos = {c: i for i, c in enumerate(cols)}
    emb = np.zeros(2 * len(cols))
    total = workload.total_frequency if workload.queries else 1.0
    for q in workload.queries:
        for t in q.tables:
            for c in t.predicate_columns:
                emb[2 * pos[(t.table, c)]] += q.frequency
            for c in t.payload:
                emb[2 * pos[(t.table, c)] + 1] += q.frequency
    return emb / total


@dataclass
class Featurizer:
    """Builds state vectors for one (schema, workload, pool) triple.

    The no-index cost report and the query embedding are computed once.
    """

    schema: SchemaStats
    workload: Workload
    pool: CandidatePool
    cost_source: CostSource
    q_max: int = DEFAULT_Q_MAX
    _base: np.ndarray = field(init=False, repr=False)
    _embedding: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.workload) > self.q_max:
            raise DimensionError(
                f"workload has {len(self.workload)} queries but q_max is {self.q_max}"
            )
        from .costmodel import IndexConfiguration

        empty = self.cost_source.evaluate(self.workload, IndexConfiguration.empty())
        self.empty_report = empty
        self._base = np.array([c for _, c in empty.per_query], dtype=float)
        self._embedding = query_embedding(self.workload, self.schema)

    @property
    def dim(self) -> int:
        return self.q_max + len(self.pool) + 2 + len(self._embedding)

    def plan_features(self, report: CostReport) -> np.ndarray:
        out = np.zeros(self.q_max)
        costs = np.array([c for _, c in report.per_query], dtype=float)
        n = len(costs)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self._base > 0, costs / np.where(self._base > 0, self._base, 1), 1.0)
        out[:n] = ratio
        return out

    def __call__(
        self,
        config: IndexConfiguration,
        remaining_fraction: float,
        step_fraction: float,
        report: CostReport | None = None,
    ) -> StateVector:
        if report is None:
            report = self.cost_source.evaluate(self.workload, config)
        bits = np.zeros(len(self.pool))
        for idx in config.indexes:
            bits[self.pool.index_of[idx]] = 1.0
        return StateVector(
            plan_features=self.plan_features(report),
            config_bits=bits,
            meta=np.array([remaining_fraction, step_fraction]),
            query_embedding=self._embedding,
        )


def featurize(
    workload: Workload,
    config: IndexConfiguration,
    budget_state,
    cost_source: CostSource,
    *,
    schema: SchemaStats,
    pool: CandidatePool,
    step_index: int = 0,
    max_steps: int = 1,
    q_max: int = DEFAULT_Q_MAX,
) -> StateVector:
    """One-shot state construction; use :class:`Featurizer` in loops."""
    feat = Featurizer(schema, workload, pool, cost_source, q_max)
    return feat(
        config,
        budget_state.remaining_units / budget_state.total_budget_units,
        step_index / max(max_steps, 1),
    )
