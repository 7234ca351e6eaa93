"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure
(divergence, protocol breakage, failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agent import AgentBundle, evaluate, load_bundle, run_training, save_bundle
from .baselines import METHODS, exhaustive_best, greedy_select, random_select, td3_nomask, td3_swar
from .candidates import candidate_storage, enumerate_candidates
from .config import RunConfig, load_config
from .costmodel import AnalyticCostSource, spawn_external_source
from .env import IndexSelectionEnv
from .errors import AdvisorError, DimensionError, DivergenceError, ParseError, ProtocolError, SpawnError
from .nn import gradient_check
from .schema import PROFILES, generate_schema, load_schema, save_schema
from .workload import generate_workload, load_workload, save_workload

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
GRADCHECK_TOL = 1e-4
GRADCHECK_SEEDS = 10


class UsageError(Exception):
    pass


def _schema(cfg: RunConfig):
    if cfg.schema_path:
        return load_schema(cfg.schema_path)
    return generate_schema(cfg.profile, cfg.schema_seed)


def _workload(cfg: RunConfig, schema, seed: int | None = None, allow_empty: bool = False):
    if cfg.workload_path and seed is None:
        return load_workload(cfg.workload_path, schema, allow_empty)
    return generate_workload(schema, cfg.template_count, cfg.queries_per_workload,
                             cfg.workload_seed if seed is None else seed)


def _cost_source(cfg: RunConfig, schema):
    if cfg.cost_source_cmd:
        return spawn_external_source(cfg.cost_source_cmd, cfg.cost_source_timeout)
    return AnalyticCostSource(schema, cfg.heap_factor, cfg.traversal_factor)


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out_dir:
        raise UsageError("an output directory is required (--out or out_dir)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg: RunConfig, command: str, **extra) -> dict:
    return {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "versions": {"idxadvisor": __version__, "numpy": np.__version__, "python": platform.python_version()},
        **extra,
    }


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_gen(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    schema = generate_schema(cfg.profile, cfg.schema_seed)
    workload = generate_workload(schema, cfg.template_count, cfg.queries_per_workload, cfg.workload_seed)
    schema_path, workload_path = out / "schema.json", out / "workload.json"
    save_schema(schema, schema_path)
    save_workload(workload, workload_path)
    print(schema_path)
    print(workload_path)
    return EXIT_OK


def cmd_enumerate(cfg: RunConfig, args) -> int:
    schema = _schema(cfg)
    workload = _workload(cfg, schema, allow_empty=True)
    pool = enumerate_candidates(schema, workload, cfg.w_max)
    for idx in pool.candidates:
        print(json.dumps({**idx.to_dict(), "storage_units": candidate_storage(idx, schema)}))
    print(json.dumps({"count": len(pool)}))
    return EXIT_OK


def _env(cfg: RunConfig):
    schema = _schema(cfg)
    workload = _workload(cfg, schema)
    pool = enumerate_candidates(schema, workload, cfg.w_max)
    source = _cost_source(cfg, schema)
    return IndexSelectionEnv(schema, workload, pool, cfg.budget_units, source, q_max=cfg.q_max)


def _close(env) -> None:
    close = getattr(env.cost_source, "close", None)
    if close is not None:
        close()


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    env = _env(cfg)
    try:
        bundle, trace = run_training(env, cfg.agent, cfg.episodes, cfg.seed)
        save_bundle(bundle, out / "checkpoint", env.pool)
        trace.to_csv(out / "trace.csv")
        trace.timing_to_csv(out / "timing.csv")
        _write_json(out / "run_manifest.json", _manifest(cfg, "train", pool_size=len(env.pool)))
    finally:
        _close(env)
    print(out / "trace.csv")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    bundle, manifest = load_bundle(args.checkpoint)
    env = _env(cfg)
    try:
        if manifest.get("pool_fingerprint") not in (None, env.pool.fingerprint()):
            raise DimensionError("checkpoint was trained on a different candidate pool")
        config, report = evaluate(bundle, env)
    finally:
        _close(env)
    result = {
        "config": config.to_list(),
        "value": 1.0 - report.total_cost / env.empty_cost if env.empty_cost > 0 else 0.0,
        "storage_units": config.total_storage_units,
        "report": report.to_dict(),
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    if cfg.out_dir:
        _write_json(_out_dir(cfg) / "evaluation.json", result)
    return EXIT_OK


def _compare_point(method, cfg, schema, workload, pool, budget, episodes, source):
    if method == "exhaustive":
        return exhaustive_best(pool, workload, schema, budget, cfg.max_exhaustive_pool, source)
    if method == "greedy":
        return greedy_select(pool, workload, schema, budget, source)
    if method == "random":
        return random_select(pool, workload, schema, budget, cfg.seed, source)
    env = IndexSelectionEnv(schema, workload, pool, budget, source, q_max=cfg.q_max)
    runner = td3_nomask if method == "td3_nomask" else td3_swar
    res, _ = runner(env, episodes, cfg.seed, cfg.agent)
    return res


_COMPARE_FIELDS = ["method", "workload", "budget", "episodes", "value", "storage", "seconds", "note"]


def cmd_compare(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    unknown = sorted(set(cfg.methods) - set(METHODS))
    if unknown:
        raise UsageError(f"unknown methods: {unknown}")
    schema = _schema(cfg)
    source = _cost_source(cfg, schema)
    rows = []
    try:
        for wseed in cfg.workload_seeds:
            workload = _workload(cfg, schema, wseed)
            pool = enumerate_candidates(schema, workload, cfg.w_max)
            for budget in cfg.budgets:
                for method in cfg.methods:
                    learned = method in ("td3_nomask", "td3_swar")
                    for episodes in (cfg.episode_grid if learned else [0]):
                        row = {"method": method, "workload": wseed, "budget": budget, "episodes": episodes,
                               "value": "", "storage": "", "seconds": "", "note": ""}
                        if method == "exhaustive" and len(pool) > cfg.max_exhaustive_pool:
                            row["note"] = f"skipped: pool of {len(pool)} exceeds {cfg.max_exhaustive_pool}"
                            print(f"warning: exhaustive {row['note']}", file=sys.stderr)
                        else:
                            res = _compare_point(method, cfg, schema, workload, pool, budget, episodes, source)
                            row.update(value=repr(float(res.value)),
                                       storage=repr(float(res.config.total_storage_units)),
                                       seconds=f"{res.elapsed_seconds:.3f}")
                        rows.append(row)
    finally:
        close = getattr(source, "close", None)
        if close is not None:
            close()
    path = out / "compare.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_COMPARE_FIELDS)
        w.writeheader()
        w.writerows(rows)
    _write_json(out / "run_manifest.json", _manifest(cfg, "compare"))
    print(path)
    return EXIT_OK


def gradcheck_report(cfg: RunConfig, state_dim: int = 12, num_actions: int = 5,
                     seeds: int = GRADCHECK_SEEDS) -> dict[str, float]:
    """Worst relative error per network over ``seeds`` random draws."""
    worst: dict[str, float] = {}
    for seed in range(seeds):
        bundle = AgentBundle(state_dim, num_actions, cfg.agent, cfg.seed + seed)
        for name, net in bundle.architectures().items():
            err = gradient_check(net, seed=seed)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    worst = gradcheck_report(cfg)
    ok = True
    for name, err in worst.items():
        status = "PASS" if err <= GRADCHECK_TOL else "FAIL"
        ok &= status == "PASS"
        print(f"{name}: max relative error {err:.3e} {status}")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "gen": cmd_gen,
    "enumerate": cmd_enumerate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idxadvisor", description="Index selection with a masked TD3 agent.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--out", help="output directory")
        if name in ("gen", "enumerate", "train", "evaluate", "compare"):
            p.add_argument("--profile", choices=PROFILES)
        if name in ("enumerate", "train", "evaluate", "compare"):
            p.add_argument("--schema", help="schema JSON file")
            p.add_argument("--workload", help="workload JSON file")
            p.add_argument("--w-max", type=int)
        if name in ("train", "evaluate"):
            p.add_argument("--budget", type=float)
        if name == "train":
            p.add_argument("--episodes", type=int)
        if name == "evaluate":
            p.add_argument("--checkpoint", help="checkpoint directory written by train")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "profile": getattr(args, "profile", None),
        "schema_path": getattr(args, "schema", None),
        "workload_path": getattr(args, "workload", None),
        "w_max": getattr(args, "w_max", None),
        "budget_units": getattr(args, "budget", None),
        "episodes": getattr(args, "episodes", None),
    }
    try:
        cfg = load_config(args.config, **overrides)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ParseError, FileNotFoundError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, ProtocolError, SpawnError, AdvisorError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
