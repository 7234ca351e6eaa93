import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from idxadvisor.candidates import enumerate_candidates  # noqa: E402
from idxadvisor.costmodel import AnalyticCostSource  # noqa: E402
from idxadvisor.env import IndexSelectionEnv  # noqa: E402
from idxadvisor.schema import ColumnStats, SchemaStats, TableStats, generate_schema  # noqa: E402
from idxadvisor.workload import Query, TableRef, Workload, generate_workload  # noqa: E402


def col(name, width=8, sel_eq=0.01, sel_range=0.1, distinct=0.5):
    return ColumnStats(name, width, distinct, sel_eq, sel_range)


def one_table_schema(rows=10_000, cols=("a", "b", "c"), width=8, sel_eq=0.01, sel_range=0.1):
    return SchemaStats((TableStats("t", rows, tuple(col(c, width, sel_eq, sel_range) for c in cols)),), 0)


def query(qid, preds, payload=(), table="t", freq=1.0):
    return Query(qid, (TableRef(table, tuple(preds), frozenset(payload)),), freq)


@pytest.fixture
def tiny():
    schema = generate_schema("tiny", 5)
    workload = generate_workload(schema, 6, 20, 5)
    pool = enumerate_candidates(schema, workload, 2)
    return schema, workload, pool


@pytest.fixture
def tiny_env(tiny):
    schema, workload, pool = tiny
    return IndexSelectionEnv(schema, workload, pool, 2.0, AnalyticCostSource(schema))


@pytest.fixture
def simple_workload():
    return Workload((query("q0", [("a", "eq")], ["b"]),), "w")


ACCEPTANCE: list[str] = []


def acceptance_line(name: str, ok: bool, detail: str) -> None:
    line = f"{name}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
