"""
Command-line entry point: ``meangini {train,evaluate,sweep,oracle,selftest}``.

Exit codes: 0 on success, 1 when a run fails, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .envs import RNG_ALGORITHM, make_env
from .harness import ConfigError, RunMetrics, TrainConfig, evaluate, train
from .oracle import mvpi_maze_analysis
from .policies import TablePolicy, load_policy

log = logging.getLogger("meangini")

PARAM_ALIASES = {"lambda": "lam"}


def build_id() -> str:
    """
    Content hash of the package sources, in the style of a git tree id: the
    SHA-1 over ``path`` plus git blob ids of every ``*.py`` file.
    """
    root = Path(__file__).resolve().parent
    tree = hashlib.sha1()
    for path in sorted(root.rglob("*.py")):
        data = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        tree.update(f"{path.relative_to(root).as_posix()} {blob}\n".encode())
    return tree.hexdigest()[:12]


def _coerce(field_type, raw: str):
    if isinstance(field_type, str):
        field_type = field_type.split("|")[0].strip()
    kinds = {"int": int, "float": float, "bool": lambda s: s.lower() in ("1", "true", "yes")}
    conv = kinds.get(field_type if isinstance(field_type, str) else getattr(field_type, "__name__", ""))
    if conv is None:
        return raw
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {field_type}") from exc


def apply_overrides(cfg: TrainConfig, pairs) -> TrainConfig:
    """Apply ``key=value`` overrides; ``env.key=value`` edits the environment table."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    updates, env = {}, dict(cfg.env)
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        key = PARAM_ALIASES.get(key.strip(), key.strip())
        if key.startswith("env."):
            env[key[4:]] = json.loads(raw) if raw[:1] in "[{" else _try_number(raw)
        elif key in types:
            updates[key] = _coerce(types[key], raw)
        else:
            raise ConfigError(f"unknown parameter {key!r}")
    return TrainConfig(**{**cfg.to_dict(), **updates, "env": env})


def _try_number(raw: str):
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


def run_one(cfg: TrainConfig, out_dir: Path, stem: str = "run") -> Path:
    """Train once and write ``<stem>.csv``, ``<stem>.manifest.json`` and ``<stem>.policy.json``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    policy, metrics = train(cfg)
    wall = time.perf_counter() - t0
    csv_path = out_dir / f"{stem}.csv"
    metrics.write_csv(csv_path)
    policy.save(out_dir / f"{stem}.policy.json")
    manifest = {"config": cfg.to_dict(), "seed": cfg.seed, "build_id": build_id(), "version": __version__,
                "rng": RNG_ALGORITHM, "wall_time_s": round(wall, 3), "metrics_csv": csv_path.name}
    (out_dir / f"{stem}.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("%s: %d rows in %.1fs -> %s", cfg.method, len(metrics.rows), wall, csv_path)
    return csv_path


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_toml(args.config) if args.config else TrainConfig()
    cfg = apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg = TrainConfig(**{**cfg.to_dict(), "seed": args.seed})
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.method}-seed{cfg.seed}"
    path = run_one(cfg, out)
    print(path)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    try:
        policy = load_policy(args.policy)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy {args.policy}: {exc}") from exc
    if args.greedy and not isinstance(policy, TablePolicy):
        policy = TablePolicy.greedy(policy.logits_table())
    env = make_env(cfg.env)
    metrics = RunMetrics()
    metrics.add(evaluate(policy, env, args.episodes or cfg.eval_episodes, cfg.seed, "cli"))
    text = metrics.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    base = _load_config(args)
    param = PARAM_ALIASES.get(args.param, args.param)
    if param not in {f.name for f in dataclasses.fields(TrainConfig)}:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = Path(args.out) if args.out else Path("runs") / f"sweep-{param}"
    for value in values:
        for seed in seeds:
            cfg = apply_overrides(base, [f"{param}={value}", f"seed={seed}"])
            print(run_one(cfg, out, f"{param}={value}-seed{seed}"))
    return 0


def cmd_oracle(args) -> int:
    record = mvpi_maze_analysis(args.goal_reward, args.lam, args.gamma, args.max_len).as_dict()
    if args.json:
        print(json.dumps(record, indent=2))
    else:
        for key, value in record.items():
            shown = ", ".join(f"{v:.4f}" for v in value) if isinstance(value, tuple) else f"{value:.4f}"
            print(f"{key:>20}: {shown}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(args.seed)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name} ({detail})")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meangini", description="Mean-Gini deviation policy gradient experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p, seed=True):
        p.add_argument("--config", help="TOML file with [train] and [env] tables")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable; env.KEY edits the environment)")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("train", help="train one configuration and write metrics + manifest")
    config_args(p)
    p.add_argument("--out", help="output directory (default runs/<method>-seed<seed>)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved policy")
    config_args(p)
    p.add_argument("--policy", required=True, help="policy JSON written by train")
    p.add_argument("--episodes", type=int, help="number of evaluation episodes")
    p.add_argument("--greedy", action="store_true", help="act greedily instead of sampling")
    p.add_argument("--out", help="also write the metrics row to this CSV file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train once per parameter value and seed")
    config_args(p, seed=False)
    p.add_argument("--param", required=True, help="TrainConfig field to vary (e.g. lambda)")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="print the first-iteration MVPI analysis of the maze")
    p.add_argument("--goal-reward", type=float, default=20.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.2)
    p.add_argument("--gamma", type=float, default=0.999)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("selftest", help="run the bundled invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
