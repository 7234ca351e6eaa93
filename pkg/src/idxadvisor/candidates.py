"""Multi-attribute index candidate enumeration.

A candidate is an ordered column list on one table. The pool keeps every
permutation of at most ``w_max`` columns that passes three rules:

R1  each column is referenced (predicate or payload) by some query on the table;
R2  the leading column is a predicate column of some query on the table;
R3  all columns are referenced together by at least one single query.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import InvariantError
from .schema import SchemaStats
from .workload import Workload

DEFAULT_W_MAX = 3
ROWID_BYTES = 8
UNIT_BYTES = 128 * 2**20


@dataclass(frozen=True, order=True)
class IndexDef:
    table: str
    columns: tuple[str, ...]

    def __post_init__(self):
        if not self.columns:
            raise InvariantError("an index needs at least one column")
        if len(set(self.columns)) != len(self.columns):
            raise InvariantError(f"duplicate column in index {self}")

    def __str__(self) -> str:
        return f"{self.table}({', '.join(self.columns)})"

    def to_dict(self) -> dict:
        return {"table": self.table, "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d: dict) -> IndexDef:
        return cls(d["table"], tuple(d["columns"]))


@dataclass(frozen=True)
class CandidatePool:
    candidates: tuple[IndexDef, ...]
    index_of: dict[IndexDef, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        mapping = {c: i for i, c in enumerate(self.candidates)}
        if len(mapping) != len(self.candidates):
            raise InvariantError("candidate pool contains duplicates")
        object.__setattr__(self, "index_of", mapping)

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i: int) -> IndexDef:
        return self.candidates[i]

    def fingerprint(self) -> str:
        import hashlib

        text = "\n".join(str(c) for c in self.candidates)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_extra(self, extra) -> CandidatePool:
        """Pool plus ``extra`` candidates, re-sorted; bypasses the validity rules."""
        return CandidatePool(tuple(sorted(set(self.candidates) | set(extra))))


def enumerate_candidates(schema: SchemaStats, workload: Workload, w_max: int = DEFAULT_W_MAX) -> CandidatePool:
    if w_max < 1:
        raise ValueError("w_max must be >= 1")
    leading: dict[str, set[str]] = {}
    for q in workload.queries:
        for t in q.tables:
            leading.setdefault(t.table, set()).update(t.predicate_columns)

    found: set[IndexDef] = set()
    for q in workload.queries:
        for t in q.tables:
            schema.table(t.table)
            cols = sorted(t.referenced)
            for width in range(1, min(w_max, len(cols)) + 1):
                for perm in permutations(cols, width):
                    if perm[0] in leading[t.table]:
                        found.add(IndexDef(t.table, perm))
    return CandidatePool(tuple(sorted(found)))


def index_bytes(index: IndexDef, schema: SchemaStats) -> int:
    table = schema.table(index.table)
    width = sum(table.column(c).width_bytes for c in index.columns)
    return table.row_count * (width + ROWID_BYTES)


def candidate_storage(index: IndexDef, schema: SchemaStats) -> float:
    """Index size in storage units (1 unit = 128 MiB)."""
    return index_bytes(index, schema) / UNIT_BYTES


def pool_storage(pool: CandidatePool, schema: SchemaStats) -> np.ndarray:
    return np.array([candidate_storage(c, schema) for c in pool.candidates])
