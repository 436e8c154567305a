"""``nuesched`` command line.

Every failure prints one JSON object on stderr (``{"error": ..., "message":
...}``) and exits nonzero: 2 for bad input, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, parse_config
from .envs import EnvSpec, render_level
from .flops import REFERENCE_CONSTANTS, FlopsModel, o_sampling, o_total, o_update
from .kernels import BACKEND
from .ppo import evaluate, load_checkpoint


class UsageError(Exception):
    """Bad arguments or inputs; exit code 2."""


def _emit_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    summaries = harness.run_suite(cfg, args.output_dir)
    for s in summaries:
        print(
            json.dumps(
                {
                    "seed": s.seed,
                    "status": s.status,
                    "final_train_score": s.final_train_score,
                    "test_score": s.test_score,
                    "flops_total": s.flops_total,
                    "selection_proportions": s.selection_proportions,
                }
            )
        )
    failed = [s for s in summaries if not s.ok]
    if failed:
        _emit_error(
            "SeedFailure",
            f"{len(failed)} of {len(summaries)} seeds failed",
            seeds={s.seed: s.error for s in failed},
        )
        return 1
    return 0


def cmd_eval(args) -> int:
    cfg = parse_config(args.config)
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    agent = load_checkpoint(path)
    returns = evaluate(agent, cfg.env, args.episodes or cfg.eval_episodes, args.seed, args.partition)
    print(
        json.dumps(
            {
                "partition": args.partition,
                "episodes": len(returns),
                "mean": float(np.mean(returns)),
                "median": float(np.median(returns)),
                "std": float(np.std(returns)),
            }
        )
    )
    return 0


def _load(dirs) -> dict[str, list[harness.RunRecord]]:
    try:
        return harness.load_runs(dirs)
    except FileNotFoundError as err:
        raise UsageError(str(err)) from None


def cmd_aggregate(args) -> int:
    grouped = _load(args.dirs)
    summaries = [r.summary for runs in grouped.values() for r in runs if r.summary is not None]
    if not summaries:
        raise UsageError("no run summaries found")
    baseline = args.baseline
    if baseline is None:
        baseline = next((m for m in ("fixed", "ppo") if m in grouped), sorted(grouped)[0])
    try:
        report = harness.aggregate(summaries, baseline, args.score, args.resamples, seed=args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None
    out = Path(args.out or args.dirs[0])
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.txt").write_text(report.to_text() + "\n")
    (out / "aggregate.csv").write_text(report.to_csv())
    print(report.to_text())
    return 0


def cmd_report_decisions(args) -> int:
    grouped = _load([args.dir])
    if not grouped:
        raise UsageError(f"no logs found under {args.dir}")
    rows = []
    for method in sorted(grouped):
        rep = harness.decision_report([r.records for r in grouped[method]])
        final = rep.final
        rows.append({"method": method, "episodes": len(rep.proportions), "final": {str(k): v for k, v in final.items()}})
        shares = "  ".join(f"K={k}: {v:.3f}" for k, v in final.items())
        print(f"{method:<20} {shares}")
    if args.json:
        print(json.dumps(rows))
    return 0


def cmd_plot(args) -> int:
    grouped = _load([args.dir])
    written = harness.emit_plots(grouped, args.out or Path(args.dir) / "plots")
    for p in written:
        print(p)
    return 0


def _env_spec(text: str) -> EnvSpec:
    path = Path(text)
    if path.is_file():
        data = json.loads(path.read_text())
        if "env" in data:
            return parse_config(path).env
        return EnvSpec.model_validate(data)
    return EnvSpec(kind=text)


def cmd_render_level(args) -> int:
    try:
        spec = _env_spec(args.spec)
    except (ValueError, json.JSONDecodeError) as err:
        raise UsageError(f"bad environment spec {args.spec!r}: {err}") from None
    print(render_level(spec, args.seed))
    return 0


def cmd_flops_verify(args) -> int:
    model = FlopsModel(
        o_bs1=args.o_bs1,
        n_envs=args.n_envs,
        episode_len=args.episode_len,
        batch_size=args.batch_size,
        n_batches=args.n_batches,
        n_episodes=args.episodes,
    )
    values = {
        "O_sampling": o_sampling(model),
        "O_update": o_update(model, args.k),
        "O_total": o_total(model, args.k),
    }
    if args.json:
        print(json.dumps(values))
    else:
        for name, v in values.items():
            print(f"{name} = {v:,}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nuesched", description="Bandit-scheduled PPO update epochs at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("--version-info", action="store_true", help="print the kernel backend and exit")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", help="train every seed of a config")
    t.add_argument("config")
    t.add_argument("--output-dir", default=None, help="override output_dir from the config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    e.add_argument("checkpoint")
    e.add_argument("config")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--partition", choices=("train", "test"), default="test")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("aggregate", help="normalized mean/median/IQM/OG with bootstrap intervals")
    a.add_argument("dirs", nargs="+")
    a.add_argument("--baseline", default=None, help="method used for normalization (default: fixed, else ppo, else the first name)")
    a.add_argument("--score", choices=("test", "train"), default="test")
    a.add_argument("--resamples", type=int, default=2000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_aggregate)

    r = sub.add_parser("report-decisions", help="final share of each K per method")
    r.add_argument("dir")
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_report_decisions)

    pl = sub.add_parser("plot", help="write SVG figures and their CSV data")
    pl.add_argument("dir")
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=cmd_plot)

    rl = sub.add_parser("render-level", help="ASCII view of one level")
    rl.add_argument("spec", help="env kind or a JSON file with an env spec or full config")
    rl.add_argument("seed", type=int)
    rl.set_defaults(func=cmd_render_level)

    f = sub.add_parser("flops-verify", help="closed-form compute counts")
    ref = REFERENCE_CONSTANTS
    f.add_argument("--o-bs1", type=int, default=ref["o_bs1"])
    f.add_argument("--n-envs", type=int, default=ref["n_envs"])
    f.add_argument("--episode-len", type=int, default=ref["episode_len"])
    f.add_argument("--batch-size", type=int, default=ref["batch_size"])
    f.add_argument("--n-batches", type=int, default=ref["n_batches"])
    f.add_argument("--episodes", type=int, default=ref["n_episodes"])
    f.add_argument("--k", type=int, default=3)
    f.add_argument("--json", action="store_true")
    f.set_defaults(func=cmd_flops_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            _emit_error("UsageError", "invalid command line arguments")
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.version_info:
        print(json.dumps({"kernel_backend": BACKEND}))
        return 0
    if args.command is None:
        parser.print_help()
        _emit_error("UsageError", "no command given")
        return 2
    try:
        return args.func(args)
    except ConfigError as err:
        _emit_error("ConfigError", str(err), key=err.key)
        return 2
    except UsageError as err:
        _emit_error("UsageError", str(err))
        return 2
    except Exception as err:
        _emit_error(type(err).__name__, str(err))
        return 1


if __name__ == "__main__":
    sys.exit(main())
