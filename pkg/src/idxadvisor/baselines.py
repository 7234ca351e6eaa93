"""Reference index selectors: exhaustive, greedy, random and the no-mask TD3 ablation."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .agent import AgentConfig, TrainingTrace, evaluate, run_training
from .candidates import CandidatePool, pool_storage
from .costmodel import AnalyticCostSource, CostReport, CostSource, IndexConfiguration, access_cost
from .env import IndexSelectionEnv
from .errors import PoolTooLargeError
from .schema import SchemaStats
from .workload import Workload

METHODS = ("exhaustive", "greedy", "random", "td3_nomask", "td3_swar")
DEFAULT_MAX_POOL = 16


@dataclass(frozen=True)
class BaselineResult:
    method: str
    config: IndexConfiguration
    report: CostReport
    elapsed_seconds: float
    value: float = 0.0


def _result(method, indexes, workload, schema, cost_source, start) -> BaselineResult:
    config = IndexConfiguration.build(indexes, schema)
    report = cost_source.evaluate(workload, config)
    empty = cost_source.evaluate(workload, IndexConfiguration.empty()).total_cost
    value = 1.0 - report.total_cost / empty if empty > 0 else 0.0
    return BaselineResult(method, config, report, time.perf_counter() - start, value)


def _access_matrix(pool: CandidatePool, workload: Workload, schema: SchemaStats, source):
    """Frequency-weighted cost of each (query, table) slot: seq scan and per candidate."""
    slots, seq = [], []
    for q in workload.queries:
        for ref in q.tables:
            slots.append((q, ref))
            seq.append(q.frequency * schema.table(ref.table).row_count)
    mat = np.full((len(pool), len(slots)), np.inf)
    for k, idx in enumerate(pool.candidates):
        for j, (q, ref) in enumerate(slots):
            if idx.table != ref.table:
                continue
            c = access_cost(ref, idx, schema.table(ref.table), source.heap_factor, source.traversal_factor)
            if c is not None:
                mat[k, j] = q.frequency * c
    return np.asarray(seq, dtype=float), mat


def exhaustive_best(pool: CandidatePool, workload: Workload, schema: SchemaStats, budget: float,
                    max_pool: int = DEFAULT_MAX_POOL, cost_source: CostSource | None = None) -> BaselineResult:
    """Minimum-cost budget-feasible subset; ties go to smaller storage, then lexicographic."""
    start = time.perf_counter()
    if len(pool) > max_pool:
        raise PoolTooLargeError(f"pool has {len(pool)} candidates, exhaustive limit is {max_pool}")
    source = cost_source or AnalyticCostSource(schema)
    k = len(pool)
    if k == 0 or budget <= 0:
        return _result("exhaustive", [], workload, schema, source, start)
    sizes = pool_storage(pool, schema)
    storage = np.zeros(1 << k)
    if isinstance(source, AnalyticCostSource):
        seq, mat = _access_matrix(pool, workload, schema, source)
        best = np.empty((1 << k, len(seq)))
        best[0] = seq
        for mask in range(1, 1 << k):
            low = (mask & -mask).bit_length() - 1
            prev = mask & (mask - 1)
            best[mask] = np.minimum(best[prev], mat[low])
            storage[mask] = storage[prev] + sizes[low]
        costs = best.sum(axis=1)
    else:
        costs = np.empty(1 << k)
        for mask in range(1 << k):
            chosen = [pool[i] for i in range(k) if mask >> i & 1]
            if mask:
                low = (mask & -mask).bit_length() - 1
                storage[mask] = storage[mask & (mask - 1)] + sizes[low]
            costs[mask] = source.evaluate(workload, IndexConfiguration.build(chosen, schema)).total_cost

    def members(mask):
        return tuple(pool[i] for i in range(k) if mask >> i & 1)

    feasible = np.nonzero(storage <= budget)[0]
    lowest = costs[feasible].min()
    tied = [int(m) for m in feasible if np.isclose(costs[m], lowest, rtol=1e-12, atol=1e-9)]
    winner = min(tied, key=lambda m: (storage[m], members(m)))
    return _result("exhaustive", members(winner),
                   workload, schema, source, start)


def greedy_select(pool: CandidatePool, workload: Workload, schema: SchemaStats, budget: float,
                  cost_source: CostSource | None = None) -> BaselineResult:
    """Repeatedly add the candidate with the best cost reduction per storage unit."""
    start = time.perf_counter()
    source = cost_source or AnalyticCostSource(schema)
    sizes = pool_storage(pool, schema)
    chosen: list[int] = []
    config = IndexConfiguration.empty()
    current = source.evaluate(workload, config).total_cost
    used = 0.0
    while True:
        best_k, best_ratio, best_cost = -1, 0.0, current
        for k, idx in enumerate(pool.candidates):
            if k in chosen or sizes[k] > budget - used:
                continue
            cost = source.evaluate(workload, config.with_index(idx, schema)).total_cost
            ratio = (current - cost) / sizes[k]
            if current - cost > 0 and ratio > best_ratio:
                best_k, best_ratio, best_cost = k, ratio, cost
        if best_k < 0:
            break
        chosen.append(best_k)
        config = config.with_index(pool[best_k], schema)
        used += sizes[best_k]
        current = best_cost
    return _result("greedy", [pool[k] for k in chosen], workload, schema, source, start)


def random_select(pool: CandidatePool, workload: Workload, schema: SchemaStats, budget: float,
                  seed: int = 0, cost_source: CostSource | None = None) -> BaselineResult:
    """Add uniformly random feasible candidates until nothing else fits."""
    start = time.perf_counter()
    source = cost_source or AnalyticCostSource(schema)
    rng = np.random.default_rng(seed)
    sizes = pool_storage(pool, schema)
    taken = np.zeros(len(pool), dtype=bool)
    used = 0.0
    while True:
        options = np.nonzero(~taken & (sizes <= budget - used))[0]
        if len(options) == 0:
            break
        k = int(rng.choice(options))
        taken[k] = True
        used += sizes[k]
    return _result("random", [pool[k] for k in np.nonzero(taken)[0]], workload, schema, source, start)


def td3_nomask(env: IndexSelectionEnv, episodes: int, seed: int = 0,
               config: AgentConfig | None = None) -> tuple[BaselineResult, TrainingTrace]:
    """Train with the selector pinned on (every feasible dimension kept, no sparsity cost)."""
    start = time.perf_counter()
    cfg = replace(config or AgentConfig(), selector="pinned", lam=0.0)
    bundle, trace = run_training(env, cfg, episodes, seed)
    config_out, _ = evaluate(bundle, env)
    res = _result("td3_nomask", config_out.indexes, env.workload, env.schema, env.cost_source, start)
    return res, trace


def td3_swar(env: IndexSelectionEnv, episodes: int, seed: int = 0,
             config: AgentConfig | None = None) -> tuple[BaselineResult, TrainingTrace]:
    """Train the full agent with the adaptive selector and evaluate it."""
    start = time.perf_counter()
    cfg = replace(config or AgentConfig(), selector="adaptive")
    bundle, trace = run_training(env, cfg, episodes, seed)
    config_out, _ = evaluate(bundle, env)
    res = _result("td3_swar", config_out.indexes, env.workload, env.schema, env.cost_source, start)
    return res, trace
