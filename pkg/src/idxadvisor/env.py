"""Budget-constrained index selection episodes.

Each step adds one candidate. The reward is the workload-cost reduction
(as a fraction of the no-index cost) divided by the relative storage
growth. The storage denominator uses ``max(M_prev, M_FLOOR)`` so that the
first step, taken from an empty configuration, stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .candidates import CandidatePool, pool_storage
from .costmodel import CostReport, CostSource, IndexConfiguration
from .errors import InfeasibleActionError, InvariantError
from .schema import SchemaStats
from .workload import DEFAULT_Q_MAX, Featurizer, StateVector, Workload

M_FLOOR = 1.0
_SLACK = 1e-12


@dataclass(frozen=True)
class BudgetState:
    total_budget_units: float
    used_units: float = 0.0

    def __post_init__(self):
        if not self.total_budget_units > 0:
            raise InvariantError("total budget must be positive")
        if self.used_units < 0 or self.used_units > self.total_budget_units + _SLACK:
            raise InvariantError(
                f"used {self.used_units} outside [0, {self.total_budget_units}]"
            )

    @property
    def remaining_units(self) -> float:
        return max(0.0, self.total_budget_units - self.used_units)


@dataclass(frozen=True)
class EpisodeState:
    config: IndexConfiguration
    budget: BudgetState
    step_index: int
    state_vec: StateVector
    feasible: np.ndarray
    done: bool
    report: CostReport = field(repr=False)

    @property
    def cost(self) -> float:
        return self.report.total_cost


@dataclass(frozen=True)
class StepOutcome:
    next_state: EpisodeState
    reward: float
    info: dict


def ratio_reward(cost_before: float, cost_after: float, storage_before: float,
               storage_after: float, cost_empty: float, m_floor: float = M_FLOOR) -> float:
    gain = (cost_before - cost_after) / cost_empty
    growth = (storage_after - storage_before) / max(storage_before, m_floor)
    return gain / growth


def rollout_value(config: IndexConfiguration, workload: Workload, schema: SchemaStats | None,
                  cost_source: CostSource) -> float:
    """Fraction of the no-index workload cost removed by ``config``."""
    empty = cost_source.evaluate(workload, IndexConfiguration.empty()).total_cost
    if empty <= 0:
        return 0.0
    return 1.0 - cost_source.evaluate(workload, config).total_cost / empty


class IndexSelectionEnv:
    def __init__(
        self,
        schema: SchemaStats,
        workload: Workload,
        pool: CandidatePool,
        budget_units: float,
        cost_source: CostSource,
        max_steps: int | None = None,
        q_max: int = DEFAULT_Q_MAX,
    ):
        if len(pool) == 0:
            raise ValueError("candidate pool is empty")
        if not budget_units > 0:
            raise ValueError("budget must be positive")
        self.schema = schema
        self.workload = workload
        self.pool = pool
        self.budget_units = float(budget_units)
        self.cost_source = cost_source
        self.max_steps = len(pool) if max_steps is None else int(max_steps)
        self.featurizer = Featurizer(schema, workload, pool, cost_source, q_max)
        self.storage = pool_storage(pool, schema)
        self.empty_cost = self.featurizer.empty_report.total_cost
        self._reports: dict[frozenset, CostReport] = {}

    @property
    def num_actions(self) -> int:
        return len(self.pool)

    @property
    def state_dim(self) -> int:
        return self.featurizer.dim

    def report(self, config: IndexConfiguration) -> CostReport:
        return self._report(config)

    def _report(self, config: IndexConfiguration) -> CostReport:
        key = config.indexes
        report = self._reports.get(key)
        if report is None:
            report = self.cost_source.evaluate(self.workload, config)
            if len(self._reports) < 200_000:
                self._reports[key] = report
        return report

    def _feasible(self, config: IndexConfiguration, budget: BudgetState) -> np.ndarray:
        fits = self.storage <= budget.remaining_units
        taken = np.zeros(len(self.pool), dtype=bool)
        for idx in config.indexes:
            taken[self.pool.index_of[idx]] = True
        return (fits & ~taken).astype(np.int8)

    def _make_state(self, config, budget, step_index) -> EpisodeState:
        report = self._report(config)
        feasible = self._feasible(config, budget)
        done = (not feasible.any()) or step_index >= self.max_steps
        vec = self.featurizer(
            config,
            budget.remaining_units / budget.total_budget_units,
            step_index / max(self.max_steps, 1),
            report,
        )
        return EpisodeState(config, budget, step_index, vec, feasible, bool(done), report)

    def reset(self, seed: int | None = None) -> EpisodeState:
        # transitions are deterministic; seed is accepted for API symmetry
        return self._make_state(IndexConfiguration.empty(), BudgetState(self.budget_units), 0)

    def step(self, state: EpisodeState, action: int) -> StepOutcome:
        action = int(action)
        if state.done:
            raise InfeasibleActionError("step() called on a finished episode")
        if not 0 <= action < len(self.pool) or not state.feasible[action]:
            raise InfeasibleActionError(f"action {action} is not feasible")
        index = self.pool[action]
        config = state.config.with_index(index, self.schema)
        budget = BudgetState(
            state.budget.total_budget_units,
            min(state.budget.used_units + float(self.storage[action]),
                state.budget.total_budget_units),
        )
        nxt = self._make_state(config, budget, state.step_index + 1)
        info = {
            "cost_before": state.cost,
            "cost_after": nxt.cost,
            "storage_before": state.config.total_storage_units,
            "storage_after": config.total_storage_units,
            "cost_empty": self.empty_cost,
        }
        reward = ratio_reward(info["cost_before"], info["cost_after"], info["storage_before"],
                            info["storage_after"], self.empty_cost)
        return StepOutcome(nxt, reward, info)

    def value(self, config: IndexConfiguration) -> float:
        return 1.0 - self._report(config).total_cost / self.empty_cost
