"""Multi-seed experiment orchestration, decision summaries, aggregation and plots.

On-disk layout written by :func:`run_suite`::

    <output_dir>/<name>/config.json
    <output_dir>/<name>/seed_<s>/log.jsonl
    <output_dir>/<name>/seed_<s>/summary.json
    <output_dir>/<name>/seed_<s>/checkpoint.bin
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import metrics
from .config import ExperimentConfig, config_from_dict
from .ppo import evaluate, train

log = logging.getLogger(__name__)

MAX_WORKERS_ENV = "NUESCHED_MAX_WORKERS"
LOG_NAME = "log.jsonl"
SUMMARY_NAME = "summary.json"
CHECKPOINT_NAME = "checkpoint.bin"


@dataclass
class RunSummary:
    method: str
    task: str
    seed: int
    status: str = "ok"
    error: str | None = None
    n_episodes: int = 0
    final_train_score: float | None = None
    test_score: float | None = None
    flops_sampling: int = 0
    flops_update: int = 0
    flops_total: int = 0
    selection_counts: dict[str, int] = field(default_factory=dict)
    selection_proportions: dict[str, float] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunSummary":
        return cls(**data)


def _finite_or_none(x: float) -> float | None:
    return float(x) if np.isfinite(x) else None


def selection_proportions(counts: dict[str, int]) -> dict[str, float]:
    total = sum(counts.values())
    if total == 0:
        return {k: 0.0 for k in counts}
    return {k: v / total for k, v in counts.items()}


def run_seed(cfg: ExperimentConfig, seed: int, seed_dir: str | Path) -> RunSummary:
    """Train, evaluate and persist one seed. Failures are captured, not raised."""
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    summary = RunSummary(method=cfg.name, task=cfg.env.kind, seed=seed)
    start = time.perf_counter()
    try:
        with open(seed_dir / LOG_NAME, "w", encoding="utf-8", newline="\n") as fh:
            result = train(cfg, seed, log_file=fh, checkpoint_path=seed_dir / CHECKPOINT_NAME)
        test = evaluate(result.agent, cfg.env, cfg.eval_episodes, seed, partition="test")
        counts = {str(k): v for k, v in result.scheduler.selection_counts().items()}
        summary.n_episodes = len(result.records)
        summary.final_train_score = _finite_or_none(result.final_train_score)
        summary.test_score = _finite_or_none(float(np.mean(test)))
        summary.flops_sampling = result.ledger.sampling_total
        summary.flops_update = result.ledger.update_total
        summary.flops_total = result.ledger.total
        summary.selection_counts = counts
        summary.selection_proportions = selection_proportions(counts)
    except Exception as err:  # recorded per seed so the other seeds keep going
        summary.status = "failed"
        summary.error = f"{type(err).__name__}: {err}"
        log.error("seed %d failed: %s\n%s", seed, summary.error, traceback.format_exc())
    summary.wall_clock_s = time.perf_counter() - start
    (seed_dir / SUMMARY_NAME).write_text(summary.to_json() + "\n")
    return summary


def _run_seed_job(cfg_json: str, seed: int, seed_dir: str) -> RunSummary:
    return run_seed(config_from_dict(json.loads(cfg_json)), seed, seed_dir)


def worker_count(requested: int, n_jobs: int) -> int:
    cap = os.environ.get(MAX_WORKERS_ENV)
    n = requested
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{MAX_WORKERS_ENV} must be an integer, got {cap!r}") from None
    return max(1, min(n, n_jobs))


def run_dir(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> Path:
    return Path(output_dir if output_dir is not None else cfg.output_dir) / cfg.name


def run_suite(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> list[RunSummary]:
    """Run every configured seed; returns summaries in seed order."""
    root = run_dir(cfg, output_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(cfg.to_json() + "\n")
    jobs = [(s, root / f"seed_{s}") for s in cfg.seeds]
    n_workers = worker_count(cfg.workers, len(jobs))
    if n_workers == 1:
        return [run_seed(cfg, s, d) for s, d in jobs]
    cfg_json = cfg.to_json()
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(_run_seed_job, cfg_json, s, str(d)) for s, d in jobs]
        return [f.result() for f in futures]


# ------------------------------------------------------------------ loading


@dataclass
class RunRecord:
    method: str
    seed: int
    path: Path
    records: list[dict]
    summary: RunSummary | None


def read_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_runs(dirs: Iterable[str | Path]) -> dict[str, list[RunRecord]]:
    """Find every seed directory below ``dirs`` and group it by method."""
    grouped: dict[str, list[RunRecord]] = {}
    seen: set[Path] = set()
    for d in dirs:
        d = Path(d)
        if not d.exists():
            raise FileNotFoundError(f"no such directory: {d}")
        for log_path in sorted(d.rglob(LOG_NAME)):
            seed_dir = log_path.parent.resolve()
            if seed_dir in seen:
                continue
            seen.add(seed_dir)
            summary = None
            if (seed_dir / SUMMARY_NAME).is_file():
                summary = RunSummary.from_dict(json.loads((seed_dir / SUMMARY_NAME).read_text()))
            method = summary.method if summary else seed_dir.parent.name
            seed = summary.seed if summary else int(seed_dir.name.rsplit("_", 1)[-1])
            rec = RunRecord(method, seed, seed_dir, read_log(log_path), summary)
            grouped.setdefault(method, []).append(rec)
    for runs in grouped.values():
        runs.sort(key=lambda r: r.seed)
    return grouped


# ---------------------------------------------------------------- decisions


@dataclass
class DecisionReport:
    arms: tuple[int, ...]
    proportions: np.ndarray  # episodes x arms, running share of each arm

    @property
    def final(self) -> dict[int, float]:
        if len(self.proportions) == 0:
            return {a: 0.0 for a in self.arms}
        return dict(zip(self.arms, self.proportions[-1].tolist()))


def decision_report(logs: Sequence[list[dict]], arms: Sequence[int] | None = None) -> DecisionReport:
    """Cumulative share of each K, pooled over all given logs, per episode."""
    if not logs:
        raise ValueError("decision_report needs at least one log")
    if arms is None:
        arms = sorted({int(r["selected_K"]) for recs in logs for r in recs}, reverse=True)
    arms = tuple(int(a) for a in arms)
    col = {a: i for i, a in enumerate(arms)}
    n_ep = max(len(recs) for recs in logs)
    per_ep = np.zeros((n_ep, len(arms)))
    for recs in logs:
        for e, r in enumerate(recs):
            k = int(r["selected_K"])
            if k not in col:
                raise ValueError(f"log selects K={k} outside arms {arms}")
            per_ep[e, col[k]] += 1
    running = np.cumsum(per_ep, axis=0)
    totals = running.sum(axis=1, keepdims=True)
    return DecisionReport(arms, running / np.where(totals == 0, 1, totals))


# --------------------------------------------------------------- aggregate


@dataclass
class AggregateReport:
    baseline: str
    score: str
    tasks: list[str]
    rows: list[dict]  # method, metric, point, low, high, n_runs

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["method", "metric", "point", "low", "high", "n_runs"], lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow(row)
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'method':<20} {'metric':<7} {'point':>9} {'low':>9} {'high':>9} {'runs':>5}"
        lines = [f"scores: {self.score}, normalized by {self.baseline!r} per task ({', '.join(self.tasks)})", head]
        for r in self.rows:
            lines.append(
                f"{r['method']:<20} {r['metric']:<7} {r['point']:>9.4f} {r['low']:>9.4f} {r['high']:>9.4f} {r['n_runs']:>5}"
            )
        return "\n".join(lines)


def _score_of(s: RunSummary, score: str) -> float | None:
    return s.test_score if score == "test" else s.final_train_score


def aggregate(
    summaries: Iterable[RunSummary],
    baseline: str,
    score: str = "test",
    n_resamples: int = 2000,
    confidence: float = 0.95,
    seed: int = 0,
) -> AggregateReport:
    """Normalize every method by the baseline's mean per task, then aggregate."""
    if score not in ("test", "train"):
        raise ValueError("score must be 'test' or 'train'")
    table: dict[str, dict[str, list[float]]] = {}
    for s in summaries:
        value = _score_of(s, score) if s.ok else None
        if value is None:
            continue
        table.setdefault(s.method, {}).setdefault(s.task, []).append(value)
    if baseline not in table:
        raise ValueError(f"baseline method {baseline!r} has no finished runs")
    tasks = sorted(table[baseline])
    base = np.array([np.mean(table[baseline][t]) for t in tasks])

    rows = []
    for method in sorted(table, key=lambda m: (m != baseline, m)):
        per_task = table[method]
        missing = [t for t in tasks if t not in per_task]
        if missing:
            log.warning("skipping %s: no runs on %s", method, ", ".join(missing))
            continue
        n_runs = min(len(per_task[t]) for t in tasks)
        if any(len(per_task[t]) != n_runs for t in tasks):
            log.warning("%s: uneven run counts across tasks, using the first %d", method, n_runs)
        scores = np.array([[per_task[t][i] for t in tasks] for i in range(n_runs)])
        norm = metrics.normalize(scores, base)
        for name, est in metrics.summarize(norm, n_resamples, confidence, seed).items():
            rows.append({"method": method, "metric": name, **est, "n_runs": n_runs})
    return AggregateReport(baseline, score, tasks, rows)


# -------------------------------------------------------------------- plots


def _return_curves(runs: list[RunRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_ep = max(len(r.records) for r in runs)
    vals = np.full((len(runs), n_ep), np.nan)
    steps = np.full(n_ep, np.nan)
    for i, r in enumerate(runs):
        for e, rec in enumerate(r.records):
            if rec.get("mean_episodic_return") is not None:
                vals[i, e] = rec["mean_episodic_return"]
            steps[e] = rec["env_steps"]
    return steps, *curve_stats(vals)


def curve_stats(vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-episode mean and population std across seeds, ignoring missing entries."""
    vals = np.asarray(vals, dtype=np.float64)
    mean = np.full(vals.shape[1], np.nan)
    std = np.full(vals.shape[1], np.nan)
    for e in range(vals.shape[1]):
        col = vals[:, e][np.isfinite(vals[:, e])]
        if col.size:
            mean[e] = col.mean()
            std[e] = col.std()
    return mean, std


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def emit_plots(grouped: dict[str, list[RunRecord]], out_dir: str | Path) -> list[Path]:
    """Write return curves, FLOPS bars and decision shares as SVG plus CSV."""
    grouped = {m: runs for m, runs in grouped.items() if runs and any(r.records for r in runs)}
    if not grouped:
        return []
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = sorted(grouped)
    written: list[Path] = []

    # return curves
    curves = {m: _return_curves(grouped[m]) for m in methods}
    n_ep = max(len(c[0]) for c in curves.values())
    with open(out / "returns.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode"] + [f"{m}_{k}" for m in methods for k in ("env_steps", "mean", "std")])
        for e in range(n_ep):
            row: list[str | int] = [e]
            for m in methods:
                steps, mean, std = curves[m]
                row += [_fmt(steps[e]), _fmt(mean[e]), _fmt(std[e])] if e < len(steps) else ["", "", ""]
            w.writerow(row)
    fig, ax = plt.subplots(figsize=(6, 4))
    for m in methods:
        steps, mean, std = curves[m]
        ax.plot(steps, mean, label=m)
        ax.fill_between(steps, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean episodic return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "returns.svg", metadata={"Date": None})
    plt.close(fig)
    written += [out / "returns.csv", out / "returns.svg"]

    # compute bars from the last log line of each seed
    flops = {}
    for m in methods:
        last = [r.records[-1] for r in grouped[m] if r.records]
        flops[m] = (
            float(np.mean([x["flops_sampling"] for x in last])),
            float(np.mean([x["flops_update"] for x in last])),
        )
    with open(out / "flops.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "sampling", "update", "total"])
        for m in methods:
            s, u = flops[m]
            w.writerow([m, repr(s), repr(u), repr(s + u)])
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(methods))
    samp = [flops[m][0] for m in methods]
    upd = [flops[m][1] for m in methods]
    ax.bar(x, samp, label="sampling")
    ax.bar(x, upd, bottom=samp, label="update")
    ax.set_xticks(x, methods)
    ax.set_ylabel("FLOPS")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "flops.svg", metadata={"Date": None})
    plt.close(fig)
    written += [out / "flops.csv", out / "flops.svg"]

    # decision shares
    reports = {m: decision_report([r.records for r in grouped[m]]) for m in methods}
    with open(out / "decisions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "episode", "K", "proportion"])
        for m in methods:
            rep = reports[m]
            for e, row in enumerate(rep.proportions):
                for a, p in zip(rep.arms, row):
                    w.writerow([m, e, a, repr(float(p))])
    fig, axes = plt.subplots(len(methods), 1, figsize=(6, 2.2 * len(methods)), squeeze=False)
    for ax, m in zip(axes[:, 0], methods):
        rep = reports[m]
        ax.stackplot(np.arange(len(rep.proportions)), rep.proportions.T, labels=[f"K={a}" for a in rep.arms])
        ax.set_title(m)
        ax.set_ylim(0, 1)
        ax.legend(loc="upper right", fontsize="small")
    axes[-1, 0].set_xlabel("episode")
    fig.tight_layout()
    fig.savefig(out / "decisions.svg", metadata={"Date": None})
    plt.close(fig)
    written += [out / "decisions.csv", out / "decisions.svg"]
    return written
