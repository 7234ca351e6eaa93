"""TD3 agent with a state-wise action selector (TD3-TD-SWAR).

The actor emits one score in [-1, 1] per candidate; the executed action is
the highest-scoring candidate that survives the selector mask. Critics see
the score vector with masked dimensions pinned to -1, baselines see the raw
score vector. The selector is trained by policy gradient on the gap between
baseline and critic squared TD errors, minus an expected-L0 sparsity cost.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .candidates import CandidatePool, IndexDef, enumerate_candidates
from .costmodel import CostReport, CostSource, IndexConfiguration
from .env import IndexSelectionEnv
from .errors import DimensionError, DivergenceError, EmptyMaskError
from .nn import AdamState, Mlp, adam_step, backward, forward, load_net, save_net, soft_update
from .schema import SchemaStats
from .workload import Workload

NOT_SELECTED = -1.0


@dataclass
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    explore_sigma: float = 0.2
    target_sigma: float = 0.2
    target_clip: float = 0.5
    lam: float = 0.1
    beta: float = 0.3
    rho: float = 0.9
    eps_p: float = 1e-3
    batch_size: int = 64
    buffer_size: int = 100_000
    lr: float = 3e-4
    hidden: tuple[int, ...] = (128, 128)
    selector: str = "adaptive"  # "adaptive" or "pinned" (no-mask ablation)
    advantage_norm: bool = True
    score_penalty: float = 0.3
    updates_per_step: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.selector not in ("adaptive", "pinned"):
            raise ValueError(f"selector must be 'adaptive' or 'pinned', got {self.selector!r}")

    @classmethod
    def from_dict(cls, d: dict) -> AgentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown agent settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Transition:
    """One environment step.

    ``action`` holds the raw score vector and ``mask`` the selector mask in
    force when it was executed, so the executed index is the argmax of the
    scores over the mask.
    """

    state: np.ndarray
    action: np.ndarray
    mask: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    feasible: np.ndarray
    feasible_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer; batches are drawn without replacement."""

    def __init__(self, capacity: int, state_dim: int, num_actions: int, seed: int = 0):
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, num_actions))
        self.m = np.zeros((capacity, num_actions), dtype=bool)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.d = np.zeros(capacity)
        self.f = np.zeros((capacity, num_actions), dtype=bool)
        self.f2 = np.zeros((capacity, num_actions), dtype=bool)
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.pos
        self.s[i], self.a[i], self.m[i], self.r[i] = t.state, t.action, t.mask, t.reward
        self.s2[i], self.d[i] = t.next_state, float(t.done)
        self.f[i], self.f2[i] = t.feasible, t.feasible_next
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> dict[str, np.ndarray]:
        idx = self.rng.choice(self.size, size=batch_size, replace=False)
        return {"s": self.s[idx], "a": self.a[idx], "m": self.m[idx], "r": self.r[idx],
                "s2": self.s2[idx], "d": self.d[idx], "f": self.f[idx], "f2": self.f2[idx]}


@dataclass
class MaskDecision:
    probs: np.ndarray
    mask: np.ndarray
    log_prob: float


@dataclass
class LossReport:
    critic_loss: float
    baseline_loss: float
    selector_objective: float
    actor_loss: float | None = None
    y_c: np.ndarray | None = field(default=None, repr=False)
    y_b: np.ndarray | None = field(default=None, repr=False)


_NETS = ("actor", "critic1", "critic2", "baseline1", "baseline2", "selector")


class AgentBundle:
    """All networks, their targets and optimizers, plus mask bookkeeping."""

    def __init__(self, state_dim: int, num_actions: int, config: AgentConfig | None = None,
                 seed: int = 0):
        self.config = config or AgentConfig()
        self.state_dim = state_dim
        self.num_actions = num_actions
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        net_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(4)]
        self.rng = np.random.default_rng(ss.spawn(1)[0])
        hid = list(self.config.hidden)
        relu = ["relu"] * len(hid)
        k, sd = num_actions, state_dim
        self.actor = Mlp([sd, *hid, k], relu + ["tanh"], rng_seed=net_seeds[0])
        self.critic1 = Mlp([sd + k, *hid, 1], relu + ["linear"], rng_seed=net_seeds[1])
        self.critic2 = Mlp([sd + k, *hid, 1], relu + ["linear"], rng_seed=net_seeds[2])
        # baselines start as exact copies of the critics
        self.baseline1 = self.critic1.copy()
        self.baseline2 = self.critic2.copy()
        self.selector = Mlp([sd + k, *hid, k], relu + ["sigmoid"], rng_seed=net_seeds[3])
        self.targets = {name: getattr(self, name).copy() for name in _NETS}
        self.optim = {name: AdamState.for_net(getattr(self, name), self.config.lr) for name in _NETS}
        self.m_hist = np.full(k, 0.5)
        self.a_exist = np.zeros(k, dtype=bool)
        self.train_calls = 0
        self.selector_updates = 0
        # best configuration reached by a training rollout: (pool fingerprint, indexes, value)
        self.incumbent: tuple[str, list[IndexDef], float] | None = None

    def offer(self, fingerprint: str, config: IndexConfiguration, value: float) -> None:
        if self.incumbent is None or self.incumbent[0] != fingerprint or value > self.incumbent[2]:
            self.incumbent = (fingerprint, config.sorted(), float(value))

    @property
    def selector_active(self) -> bool:
        return self.config.selector == "adaptive" and self.selector_updates > 0

    def nets(self) -> dict[str, Mlp]:
        return {name: getattr(self, name) for name in _NETS}

    def architectures(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "critic": self.critic1, "baseline": self.baseline1,
                "selector": self.selector}


def _masks(bundle: AgentBundle, net: Mlp, states: np.ndarray, actions: np.ndarray,
           feasible: np.ndarray, mode: str, rng: np.random.Generator, pinned: bool,
           cache: list | None = None):
    """Batched selector pass.

    Returns (raw p, adjusted p, mask, valid dims, unclamped dims). A pinned
    selector keeps every feasible dimension with probability one. Train mode
    draws the same random numbers either way.
    """
    cfg = bundle.config
    valid = feasible.astype(bool)
    n, k = actions.shape
    draws = rng.random((n, k)) if mode == "train" else None
    if pinned:
        return np.ones((n, k)), np.where(valid, 1.0, 0.0), valid.copy(), valid, np.zeros((n, k), dtype=bool)
    p = forward(net, np.concatenate([states, actions], axis=1), cache)
    blended = (1.0 - cfg.beta) * p + cfg.beta * bundle.m_hist
    p_adj = np.clip(blended, cfg.eps_p, 1.0 - cfg.eps_p)
    free = (blended > cfg.eps_p) & (blended < 1.0 - cfg.eps_p)
    p_adj = np.where(valid, p_adj, 0.0)
    if mode == "train":
        mask = (draws < p_adj) & valid
    else:
        mask = (p_adj >= 0.5) & valid
    empty = ~mask.any(axis=1) & valid.any(axis=1)
    if empty.any():
        rows = np.nonzero(empty)[0]
        best = np.argmax(np.where(valid[rows], p_adj[rows], -1.0), axis=1)
        mask[rows, best] = True
    return p, p_adj, mask, valid, free


def _log_prob(p_adj: np.ndarray, mask: np.ndarray, valid: np.ndarray) -> np.ndarray:
    safe = np.clip(np.where(valid, p_adj, 0.5), 1e-12, 1.0 - 1e-12)
    ll = np.where(mask, np.log(safe), np.log1p(-safe))
    return np.where(valid, ll, 0.0).sum(axis=-1)


def select_mask(bundle: AgentBundle, state: np.ndarray, action: np.ndarray, feasible: np.ndarray,
                mode: str = "train") -> MaskDecision:
    feasible = np.asarray(feasible).astype(bool) & ~bundle.a_exist
    if not feasible.any():
        raise EmptyMaskError("no feasible dimension to select")
    _, p_adj, mask, valid, _ = _masks(
        bundle, bundle.selector, np.asarray(state)[None, :], np.asarray(action)[None, :],
        feasible[None, :], mode, bundle.rng, pinned=not bundle.selector_active,
    )
    return MaskDecision(p_adj[0], mask[0], float(_log_prob(p_adj, mask, valid)[0]))


def act(bundle: AgentBundle, state: np.ndarray, feasible: np.ndarray, mode: str = "train"):
    """Return (score vector, chosen candidate index, MaskDecision)."""
    state = np.asarray(state, dtype=float)
    scores = forward(bundle.actor, state)
    if mode == "train":
        scores = scores + bundle.rng.normal(0.0, bundle.config.explore_sigma, size=scores.shape)
    scores = np.clip(scores, -1.0, 1.0)
    decision = select_mask(bundle, state, scores, feasible, mode)
    chosen = int(np.argmax(np.where(decision.mask, scores, -np.inf)))
    if not decision.mask[chosen] or not feasible[chosen] or bundle.a_exist[chosen]:
        raise AssertionError(f"masked or infeasible dimension {chosen} chosen")
    return scores, chosen, decision


def _pin(actions: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, actions, NOT_SELECTED)


def _q(net: Mlp, s: np.ndarray, a: np.ndarray, cache: list | None = None) -> np.ndarray:
    return forward(net, np.concatenate([s, a], axis=1), cache)[:, 0]


def _regress(bundle: AgentBundle, name: str, s, a, y) -> float:
    net = getattr(bundle, name)
    cache: list = []
    q = _q(net, s, a, cache)
    err = q - y
    grads, _ = backward(net, None, (2.0 * err / len(y))[:, None], cache)
    adam_step(net, grads, bundle.optim[name])
    return float(np.mean(err * err))


def train_step(bundle: AgentBundle, buffer: ReplayBuffer, batch_size: int | None = None) -> LossReport:
    cfg = bundle.config
    n = batch_size or cfg.batch_size
    b = buffer.sample(n)
    s, a, r, s2, f, f2 = b["s"], b["a"], b["r"], b["s2"], b["f"], b["f2"]
    rng = bundle.rng
    tg = bundle.targets
    pinned = not bundle.selector_active
    # the vector that decided each executed index
    decided = _pin(a, b["m"])

    # target action with clipped smoothing noise, masked by the target selector
    noise = np.clip(rng.normal(0.0, cfg.target_sigma, size=a.shape), -cfg.target_clip, cfg.target_clip)
    a_next = np.clip(forward(tg["actor"], s2) + noise, -1.0, 1.0)
    _, _, m_next, _, _ = _masks(bundle, tg["selector"], s2, a_next, f2, "train", rng, pinned)
    a_next_c, a_next_b = _pin(a_next, m_next), _pin(a_next, f2)
    not_done = 1.0 - b["d"]
    y_c = r + cfg.gamma * not_done * np.minimum(_q(tg["critic1"], s2, a_next_c),
                                                _q(tg["critic2"], s2, a_next_c))
    y_b = r + cfg.gamma * not_done * np.minimum(_q(tg["baseline1"], s2, a_next_b),
                                                _q(tg["baseline2"], s2, a_next_b))

    # fresh masks on the stored actions
    sel_cache: list = []
    _, p_adj, m, valid, free = _masks(bundle, bundle.selector, s, a, f, "train", rng, pinned, sel_cache)
    a_c = _pin(decided, m)
    td_c = 0.5 * ((y_c - _q(bundle.critic1, s, a_c)) ** 2 + (y_c - _q(bundle.critic2, s, a_c)) ** 2)
    td_b = 0.5 * ((y_b - _q(bundle.baseline1, s, decided)) ** 2
                  + (y_b - _q(bundle.baseline2, s, decided)) ** 2)

    critic_loss = 0.5 * (_regress(bundle, "critic1", s, a_c, y_c) + _regress(bundle, "critic2", s, a_c, y_c))
    baseline_loss = 0.5 * (_regress(bundle, "baseline1", s, decided, y_b)
                           + _regress(bundle, "baseline2", s, decided, y_b))

    selector_objective = 0.0
    if cfg.selector == "adaptive":
        if pinned:
            # first update: the masks above were pinned, sample real ones
            sel_cache = []
            _, p_adj, m, valid, free = _masks(bundle, bundle.selector, s, a, f, "train", rng, False, sel_cache)
        delta = td_b - td_c
        if cfg.advantage_norm:
            delta = (delta - delta.mean()) / (delta.std() + 1e-8)
        logp = _log_prob(p_adj, m, valid)
        expected_l0 = np.where(valid, p_adj, 0.0).sum(axis=1)
        selector_objective = float(np.mean(delta * logp) - cfg.lam * np.mean(expected_l0))
        safe = np.clip(np.where(valid, p_adj, 0.5), 1e-12, 1.0 - 1e-12)
        dlogp = np.where(m, 1.0 / safe, -1.0 / (1.0 - safe))
        d_padj = (delta[:, None] * dlogp - cfg.lam) / n
        d_p = np.where(valid & free, d_padj * (1.0 - cfg.beta), 0.0)
        grads, _ = backward(bundle.selector, None, -d_p, sel_cache)
        adam_step(bundle.selector, grads, bundle.optim["selector"])
        bundle.selector_updates += 1
        bundle.m_hist = cfg.rho * bundle.m_hist + (1.0 - cfg.rho) * m.mean(axis=0)

    bundle.train_calls += 1
    actor_loss = None
    if bundle.train_calls % cfg.policy_delay == 0:
        cache: list = []
        a_pi = forward(bundle.actor, s, cache)
        _, _, keep, _, _ = _masks(bundle, bundle.selector, s, a_pi, f, "eval", rng,
                                  not bundle.selector_active)
        crit_cache: list = []
        q = _q(bundle.critic1, s, _pin(a_pi, keep), crit_cache)
        actor_loss = float(-np.mean(q) + cfg.score_penalty * np.mean(np.sum(a_pi * a_pi, axis=1)))
        _, g_in = backward(bundle.critic1, None, np.full((n, 1), -1.0 / n), crit_cache)
        g_a = g_in[:, bundle.state_dim:] * keep
        if cfg.score_penalty > 0:
            # keeps scores off the tanh plateau, where argmax ties freeze the policy
            g_a = g_a + 2.0 * cfg.score_penalty * a_pi / n
        grads, _ = backward(bundle.actor, None, g_a, cache)
        adam_step(bundle.actor, grads, bundle.optim["actor"])
        for name in _NETS:
            soft_update(tg[name], getattr(bundle, name), cfg.tau)

    losses = [critic_loss, baseline_loss, selector_objective] + ([actor_loss] if actor_loss is not None else [])
    if not all(np.isfinite(losses)):
        raise DivergenceError(f"non-finite loss: {losses}")
    return LossReport(critic_loss, baseline_loss, selector_objective, actor_loss, y_c, y_b)


@dataclass
class EpisodeRecord:
    episode: int
    cum_reward: float
    rollout_value: float
    eff_action_space: float
    seconds: float
    storage: float = 0.0
    steps: int = 0


@dataclass
class TrainingTrace:
    records: list[EpisodeRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        """Deterministic columns only; wall-clock goes to :meth:`timing_to_csv`."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "cum_reward", "rollout_value", "eff_action_space"])
            for r in self.records:
                w.writerow([r.episode, repr(r.cum_reward), repr(r.rollout_value), repr(r.eff_action_space)])

    def timing_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "seconds"])
            for r in self.records:
                w.writerow([r.episode, f"{r.seconds:.6f}"])


@dataclass
class TrainedAgent:
    bundle: AgentBundle
    pool: CandidatePool
    schema: SchemaStats
    q_max: int


def run_episode(bundle: AgentBundle, env: IndexSelectionEnv, mode: str,
                buffer: ReplayBuffer | None = None, learn: bool = False):
    """Play one episode; returns (final state, cumulative reward, mean effective action space)."""
    state = env.reset()
    bundle.a_exist[:] = False
    cum, effs = 0.0, []
    while not state.done:
        s = state.state_vec.as_array()
        scores, chosen, decision = act(bundle, s, state.feasible, mode)
        effs.append(int(np.count_nonzero((decision.probs >= 0.5) & (state.feasible > 0))))
        out = env.step(state, chosen)
        cum += out.reward
        if buffer is not None:
            nxt = out.next_state
            buffer.add(Transition(s, scores, decision.mask, out.reward, nxt.state_vec.as_array(), nxt.done,
                                  state.feasible.astype(bool), nxt.feasible.astype(bool)))
            if learn and len(buffer) >= bundle.config.batch_size:
                for _ in range(bundle.config.updates_per_step):
                    train_step(bundle, buffer)
        bundle.a_exist[chosen] = True
        state = out.next_state
    if state.config.total_storage_units > env.budget_units + 1e-9:
        raise AssertionError("budget exceeded")
    return state, cum, float(np.mean(effs)) if effs else 0.0


def run_training(env: IndexSelectionEnv, config: AgentConfig | None = None, episodes: int = 300,
                 seed: int = 0, bundle: AgentBundle | None = None, progress=None):
    """Train for ``episodes`` episodes; returns (bundle, TrainingTrace)."""
    config = config or (bundle.config if bundle else AgentConfig())
    if bundle is None:
        bundle = AgentBundle(env.state_dim, env.num_actions, config, seed)
    elif bundle.num_actions != env.num_actions or bundle.state_dim != env.state_dim:
        raise DimensionError("agent dimensions do not match the environment")
    buffer = ReplayBuffer(config.buffer_size, env.state_dim, env.num_actions, seed + 1)
    fingerprint = env.pool.fingerprint()
    trace = TrainingTrace()
    for ep in range(episodes):
        start = time.perf_counter()
        try:
            final, cum, eff = run_episode(bundle, env, "train", buffer, learn=True)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), episode=ep) from exc
        rec = EpisodeRecord(ep, cum, env.value(final.config), eff,
                            time.perf_counter() - start, final.config.total_storage_units, final.step_index)
        trace.records.append(rec)
        bundle.offer(fingerprint, final.config, rec.rollout_value)
        if progress is not None:
            progress(rec)
    bundle.a_exist[:] = False
    return bundle, trace


def evaluate(agent: TrainedAgent | AgentBundle, env: IndexSelectionEnv):
    """Greedy rollout without exploration; returns (IndexConfiguration, CostReport).

    On the pool the agent was trained on, the best configuration seen during
    training is returned instead when it fits the budget and scores higher.
    """
    bundle = agent.bundle if isinstance(agent, TrainedAgent) else agent
    if bundle.num_actions != env.num_actions:
        raise DimensionError(
            f"agent was trained on {bundle.num_actions} candidates, this pool has {env.num_actions}"
        )
    if bundle.state_dim != env.state_dim:
        raise DimensionError(f"state size {env.state_dim} differs from trained {bundle.state_dim}")
    saved = bundle.a_exist.copy()
    final, _, _ = run_episode(bundle, env, "eval")
    bundle.a_exist[:] = saved
    config, report = final.config, final.report
    if bundle.incumbent is not None and bundle.incumbent[0] == env.pool.fingerprint():
        best = IndexConfiguration.build(bundle.incumbent[1], env.schema)
        if best.total_storage_units <= env.budget_units + 1e-9:
            best_report = env.report(best)
            if best_report.total_cost < report.total_cost:
                config, report = best, best_report
    return config, report


def evaluate_workload(agent: TrainedAgent, workload: Workload, budget_units: float,
                      cost_source: CostSource, w_max: int = 3):
    pool = enumerate_candidates(agent.schema, workload, w_max)
    if len(pool) != agent.bundle.num_actions:
        raise DimensionError(
            f"agent was trained on {agent.bundle.num_actions} candidates, this pool has {len(pool)}"
        )
    env = IndexSelectionEnv(agent.schema, workload, pool, budget_units, cost_source, q_max=agent.q_max)
    return evaluate(agent, env)


def save_bundle(bundle: AgentBundle, directory, pool: CandidatePool | None = None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name in _NETS:
        save_net(getattr(bundle, name), out / f"{name}.json")
        save_net(bundle.targets[name], out / f"{name}_target.json")
    cfg = asdict(bundle.config)
    cfg["hidden"] = list(cfg["hidden"])
    manifest = {
        "hyperparams": cfg,
        "M_hist": bundle.m_hist.tolist(),
        "pool_fingerprint": pool.fingerprint() if pool is not None else None,
        "state_dim": bundle.state_dim,
        "num_actions": bundle.num_actions,
        "seed": bundle.seed,
        "train_calls": bundle.train_calls,
        "selector_updates": bundle.selector_updates,
        "incumbent": None if bundle.incumbent is None else {
            "pool_fingerprint": bundle.incumbent[0],
            "config": [i.to_dict() for i in bundle.incumbent[1]],
            "value": bundle.incumbent[2],
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_bundle(directory) -> tuple[AgentBundle, dict]:
    src = Path(directory)
    manifest = json.loads((src / "manifest.json").read_text())
    config = AgentConfig.from_dict(manifest["hyperparams"])
    bundle = AgentBundle(manifest["state_dim"], manifest["num_actions"], config, manifest["seed"])
    for name in _NETS:
        setattr(bundle, name, load_net(src / f"{name}.json"))
        bundle.targets[name] = load_net(src / f"{name}_target.json")
        bundle.optim[name] = AdamState.for_net(getattr(bundle, name), config.lr)
    bundle.m_hist = np.asarray(manifest["M_hist"], dtype=float)
    bundle.train_calls = manifest.get("train_calls", 0)
    bundle.selector_updates = manifest.get("selector_updates", 0)
    inc = manifest.get("incumbent")
    if inc is not None:
        bundle.incumbent = (inc["pool_fingerprint"], [IndexDef.from_dict(d) for d in inc["config"]],
                            float(inc["value"]))
    return bundle, manifest


__all__ = [
    "AgentBundle", "AgentConfig", "LossReport", "MaskDecision", "ReplayBuffer", "TrainedAgent",
    "TrainingTrace", "Transition", "act", "evaluate", "evaluate_workload", "load_bundle",
    "run_training", "save_bundle", "select_mask", "train_step", "CostReport", "IndexConfiguration",
]
