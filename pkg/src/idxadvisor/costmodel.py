"""Analytic what-if cost model and the external cost-source proxy.

Costs are abstract units: rows examined plus a log2 traversal term for index
access. A query's cost is the sum over its tables of the cheapest access
path; an index is usable when its leading column carries a predicate.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass
from typing import Iterable, Protocol

from .candidates import IndexDef, candidate_storage
from .errors import CostSourceTimeout, InvariantError, ProtocolError, SpawnError
from .schema import SchemaStats, TableStats
from .workload import Query, TableRef, Workload, workload_to_dict

HEAP_FACTOR = 2.0
TRAVERSAL_FACTOR = 1.0


@dataclass(frozen=True)
class IndexConfiguration:
    indexes: frozenset[IndexDef]
    total_storage_units: float = 0.0

    @classmethod
    def empty(cls) -> IndexConfiguration:
        return cls(frozenset(), 0.0)

    @classmethod
    def build(cls, indexes: Iterable[IndexDef], schema: SchemaStats) -> IndexConfiguration:
        idx = frozenset(indexes)
        return cls(idx, sum(candidate_storage(i, schema) for i in sorted(idx)))

    def with_index(self, index: IndexDef, schema: SchemaStats) -> IndexConfiguration:
        if index in self.indexes:
            raise InvariantError(f"{index} already in configuration")
        return IndexConfiguration(
            self.indexes | {index}, self.total_storage_units + candidate_storage(index, schema)
        )

    def __len__(self) -> int:
        return len(self.indexes)

    def sorted(self) -> list[IndexDef]:
        return sorted(self.indexes)

    def to_list(self) -> list[dict]:
        return [i.to_dict() for i in self.sorted()]


@dataclass(frozen=True)
class CostReport:
    total_cost: float
    per_query: tuple[tuple[str, float], ...]
    storage_units: float

    def to_dict(self) -> dict:
        return {
            "total_cost": self.total_cost,
            "per_query": [{"id": q, "cost": c} for q, c in self.per_query],
            "storage_units": self.storage_units,
        }


class CostSource(Protocol):
    def evaluate(self, workload: Workload, config: IndexConfiguration) -> CostReport: ...


def access_cost(
    ref: TableRef,
    index: IndexDef,
    table: TableStats,
    heap_factor: float = HEAP_FACTOR,
    traversal_factor: float = TRAVERSAL_FACTOR,
) -> float | None:
    """Cost of answering ``ref`` through ``index``; None if the index is unusable."""
    kinds = dict(ref.predicates)
    if index.columns[0] not in kinds:
        return None
    selectivity = 1.0
    for col in index.columns:
        if col not in kinds:
            break
        selectivity *= table.column(col).selectivity(kinds[col])
    covering = ref.referenced <= set(index.columns)
    h = 1.0 if covering else heap_factor
    n = table.row_count
    return traversal_factor * math.log2(n) + n * selectivity * h


def query_cost(
    query: Query,
    config: IndexConfiguration,
    schema: SchemaStats,
    heap_factor: float = HEAP_FACTOR,
    traversal_factor: float = TRAVERSAL_FACTOR,
) -> float:
    total = 0.0
    for ref in query.tables:
        table = schema.table(ref.table)
        for col in ref.referenced:
            table.column(col)
        best = float(table.row_count)
        for index in config.indexes:
            if index.table != ref.table:
                continue
            cost = access_cost(ref, index, table, heap_factor, traversal_factor)
            # ties go to the index path; the value is the same either way
            if cost is not None and cost <= best:
                best = cost
        total += best
    return total


def make_report(workload: Workload, costs: list[float], storage: float) -> CostReport:
    per_query = tuple((q.id, c) for q, c in zip(workload.queries, costs))
    total = math.fsum(q.frequency * c for q, c in zip(workload.queries, costs))
    return CostReport(total, per_query, storage)


def workload_cost(
    workload: Workload,
    config: IndexConfiguration,
    schema: SchemaStats,
    heap_factor: float = HEAP_FACTOR,
    traversal_factor: float = TRAVERSAL_FACTOR,
) -> CostReport:
    costs = [query_cost(q, config, schema, heap_factor, traversal_factor) for q in workload.queries]
    return make_report(workload, costs, config.total_storage_units)


@dataclass(frozen=True)
class AnalyticCostSource:
    schema: SchemaStats
    heap_factor: float = HEAP_FACTOR
    traversal_factor: float = TRAVERSAL_FACTOR

    def evaluate(self, workload: Workload, config: IndexConfiguration) -> CostReport:
        return workload_cost(workload, config, self.schema, self.heap_factor, self.traversal_factor)


def check_report(report: CostReport, workload: Workload) -> None:
    """Raise InvariantError unless ``report`` is consistent with ``workload``."""
    if not math.isfinite(report.total_cost) or report.total_cost < 0:
        raise InvariantError(f"total_cost must be finite and >= 0, got {report.total_cost}")
    ids = [q.id for q in workload.queries]
    got = [q for q, _ in report.per_query]
    if got != ids:
        raise InvariantError("per_query ids do not match the workload's queries")
    for qid, c in report.per_query:
        if not math.isfinite(c) or c < 0:
            raise InvariantError(f"cost for {qid} must be finite and >= 0")
    expected = math.fsum(q.frequency * c for q, (_, c) in zip(workload.queries, report.per_query))
    if not math.isclose(report.total_cost, expected, rel_tol=1e-9, abs_tol=1e-9):
        raise InvariantError(
            f"total_cost {report.total_cost} != frequency-weighted sum {expected}"
        )


PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 10.0


class ExternalCostSource:
    """Proxy that prices configurations through a subprocess.

    The child speaks newline-delimited JSON on stdin/stdout. Calls are
    serialized; the proxy may be shared but runs one request at a time.
    """

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT):
        if isinstance(command, str):
            command = [command]
        self.command = list(command)
        self.timeout = timeout
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SpawnError(f"cannot start cost source {self.command}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        reply = self._call({"op": "hello", "version": PROTOCOL_VERSION})
        if reply.get("ok") is not True or reply.get("version") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(f"handshake rejected: {reply}")

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _call(self, message: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise ProtocolError("cost source process has exited")
            try:
                self._proc.stdin.write(json.dumps(message) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ProtocolError(f"cannot write to cost source: {exc}") from exc
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise CostSourceTimeout(f"no reply within {self.timeout}s") from None
        if line is None:
            raise ProtocolError("cost source closed its output")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed frame: {line[:200]!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"frame is not an object: {line[:200]!r}")
        return reply

    def evaluate(self, workload: Workload, config: IndexConfiguration) -> CostReport:
        reply = self._call({
            "op": "evaluate",
            "workload": workload_to_dict(workload),
            "config": config.to_list(),
        })
        try:
            per_query = tuple(
                (str(item["id"]), float(item["cost"])) for item in reply["per_query"]
            )
            report = CostReport(float(reply["total_cost"]), per_query, float(reply["storage_units"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"response missing or mistyped field: {exc}") from exc
        check_report(report, workload)
        return report

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_external_source(command, timeout: float = DEFAULT_TIMEOUT) -> ExternalCostSource:
    return ExternalCostSource(command, timeout)
