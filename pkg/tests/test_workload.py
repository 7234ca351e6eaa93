import json

import numpy as np
import pytest

from conftest import one_table_schema, query
from idxadvisor.candidates import CandidatePool, IndexDef
from idxadvisor.costmodel import AnalyticCostSource, IndexConfiguration, query_cost
from idxadvisor.env import BudgetState
from idxadvisor.errors import DimensionError, InvariantError
from idxadvisor.schema import generate_schema
from idxadvisor.workload import (
    Workload, featurize, generate_workload, load_workload, query_embedding, save_workload,
    workload_to_dict,
)


def test_size_contract():
    s = generate_schema("tiny", 1)
    w = generate_workload(s, 3, 10, 1)
    assert len(w) == 10
    # query i instantiates template i mod 3, so at most 3 distinct shapes
    assert len({q.tables for q in w.queries}) <= 3


def test_deterministic():
    s = generate_schema("tiny", 1)
    assert generate_workload(s, 3, 10, 1) == generate_workload(s, 3, 10, 1)


def test_tpch_workload_has_fifty_queries():
    s = generate_schema("tpch_like", 5)
    assert len(generate_workload(s, 22, 50, 5)) == 50


def test_template_count_bounded_by_size():
    with pytest.raises(ValueError):
        generate_workload(generate_schema("tiny", 1), 11, 10, 1)


def test_complexity_grows_with_templates():
    s = generate_schema("tpch_like", 2)

    def mean_cols(tc):
        w = generate_workload(s, tc, 60, 3)
        return np.mean([sum(len(t.referenced) for t in q.tables) for q in w.queries])

    assert mean_cols(30) > mean_cols(2)


def test_round_trip(tmp_path):
    s = generate_schema("small", 2)
    w = generate_workload(s, 6, 20, 2)
    save_workload(w, tmp_path / "w.json")
    assert load_workload(tmp_path / "w.json", s) == w


def test_unknown_column_rejected(tmp_path):
    s = generate_schema("tiny", 1)
    d = workload_to_dict(generate_workload(s, 3, 10, 1))
    d["queries"][0]["tables"][0]["predicates"][0]["column"] = "nope"
    (tmp_path / "w.json").write_text(json.dumps(d))
    with pytest.raises(InvariantError, match="unknown column"):
        load_workload(tmp_path / "w.json", s)


def test_empty_query_list_rejected(tmp_path):
    (tmp_path / "w.json").write_text(json.dumps({"name": "w", "queries": []}))
    with pytest.raises(InvariantError, match="total frequency"):
        load_workload(tmp_path / "w.json")


def test_query_without_predicate_rejected():
    from idxadvisor.workload import validate_workload
    with pytest.raises(InvariantError):
        validate_workload(Workload((query("q0", [], ["a"]),)))


def _pool():
    return CandidatePool((IndexDef("t", ("a",)), IndexDef("t", ("a", "b")), IndexDef("t", ("c",))))


def test_empty_config_gives_unit_plan_features():
    s = one_table_schema()
    w = Workload((query("q0", [("a", "eq")], ["b"]), query("q1", [("c", "range")])))
    v = featurize(w, IndexConfiguration.empty(), BudgetState(2.0), AnalyticCostSource(s), schema=s, pool=_pool())
    assert np.array_equal(v.plan_features[:2], [1.0, 1.0])
    assert not v.plan_features[2:].any()
    assert not v.config_bits.any()
    assert v.meta[0] == 1.0


def test_covering_index_for_first_query_only():
    s = one_table_schema()
    w = Workload((query("q0", [("a", "eq")], ["b"]), query("q1", [("c", "range")])))
    cfg = IndexConfiguration.build([IndexDef("t", ("a", "b"))], s)
    v = featurize(w, cfg, BudgetState(2.0), AnalyticCostSource(s), schema=s, pool=_pool())
    # hand value: log2(1e4) + 1e4 * 0.01 * 1 (covering) over 1e4 rows
    assert v.plan_features[0] == pytest.approx((np.log2(1e4) + 100.0) / 1e4, rel=1e-12)
    assert v.plan_features[1] == 1.0
    assert v.config_bits.tolist() == [0.0, 1.0, 0.0]


def test_spent_budget_meta():
    s = one_table_schema()
    w = Workload((query("q0", [("a", "eq")]),))
    v = featurize(w, IndexConfiguration.empty(), BudgetState(2.0, 2.0), AnalyticCostSource(s), schema=s, pool=_pool())
    assert v.meta[0] == 0.0


def test_q_max_exceeded():
    s = one_table_schema()
    w = Workload(tuple(query(f"q{i}", [("a", "eq")]) for i in range(5)))
    with pytest.raises(DimensionError):
        featurize(w, IndexConfiguration.empty(), BudgetState(1.0), AnalyticCostSource(s), schema=s, pool=_pool(), q_max=4)


def test_embedding_is_frequency_share():
    s = one_table_schema()
    w = Workload((query("q0", [("a", "eq")], ["b"], freq=3.0), query("q1", [("a", "range")], freq=1.0)))
    e = query_embedding(w, s)
    # columns a, b, c -> (pred, payload) pairs
    assert e.tolist() == [1.0, 0.0, 0.0, 0.75, 0.0, 0.0]


def test_plan_features_match_cost_ratio():
    s = generate_schema("tiny", 3)
    w = generate_workload(s, 4, 8, 3)
    from idxadvisor.candidates import enumerate_candidates
    pool = enumerate_candidates(s, w, 2)
    cfg = IndexConfiguration.build(pool.candidates[:3], s)
    v = featurize(w, cfg, BudgetState(100.0), AnalyticCostSource(s), schema=s, pool=pool)
    for i, q in enumerate(w.queries):
        expect = query_cost(q, cfg, s) / query_cost(q, IndexConfiguration.empty(), s)
        assert v.plan_features[i] == pytest.approx(expect, rel=1e-12)
