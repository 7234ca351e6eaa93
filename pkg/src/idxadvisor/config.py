"""Run configuration: a flat JSON object of documented keys.

Every key has a default except ``out_dir``. Unknown keys are rejected so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .agent import AgentConfig
from .candidates import DEFAULT_W_MAX
from .errors import ParseError
from .schema import PROFILES
from .workload import DEFAULT_Q_MAX

_AGENT_KEYS = tuple(f.name for f in fields(AgentConfig))


@dataclass
class RunConfig:
    out_dir: str | None = None
    profile: str = "tiny"
    schema_path: str | None = None
    schema_seed: int = 0
    workload_path: str | None = None
    template_count: int = 6
    queries_per_workload: int = 20
    workload_seed: int = 0
    w_max: int = DEFAULT_W_MAX
    budget_units: float = 2.0
    episodes: int = 300
    seed: int = 0
    q_max: int = DEFAULT_Q_MAX
    heap_factor: float = 2.0
    traversal_factor: float = 1.0
    cost_source_cmd: list[str] | str | None = None
    cost_source_timeout: float = 10.0
    # compare grid
    methods: list[str] = field(default_factory=lambda: ["greedy", "random", "exhaustive", "td3_nomask", "td3_swar"])
    budgets: list[float] = field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0])
    episode_grid: list[int] = field(default_factory=lambda: [50, 100, 200, 400])
    workload_seeds: list[int] = field(default_factory=lambda: [0])
    max_exhaustive_pool: int = 16
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ParseError(f"unknown profile {self.profile!r}; expected one of {list(PROFILES)}")
        if self.w_max < 1:
            raise ParseError("w_max must be at least 1")
        if self.episodes < 0:
            raise ParseError("episodes must be non-negative")
        if not self.budget_units > 0:
            raise ParseError("budget_units must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        agent = d.pop("agent")
        agent["hidden"] = list(agent["hidden"])
        d.update(agent)
        return d

    def digest(self) -> str:
        """Hash of every setting except the output location."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ParseError("config must be a JSON object")
        own = {f.name for f in fields(cls)} - {"agent"}
        unknown = sorted(set(data) - own - set(_AGENT_KEYS))
        if unknown:
            raise ParseError(f"unknown config keys: {unknown}")
        agent_kw = {k: v for k, v in data.items() if k in _AGENT_KEYS}
        run_kw = {k: v for k, v in data.items() if k in own}
        try:
            return cls(agent=AgentConfig(**agent_kw), **run_kw)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad config value: {exc}") from exc


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    data: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ParseError(f"{path}: config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)
