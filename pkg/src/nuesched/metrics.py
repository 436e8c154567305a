"""Score aggregation across runs and tasks.

Scores are arranged as a ``runs x tasks`` matrix. Aggregates flatten it;
the bootstrap resamples runs independently within every task column.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Aggregate = Callable[[np.ndarray], float]


def _matrix(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"scores must be 1-D or 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores contain non-finite entries")
    return arr


def normalize(scores, baseline) -> np.ndarray:
    """Divide each task column by its baseline score."""
    arr = _matrix(scores)
    base = np.broadcast_to(np.asarray(baseline, dtype=np.float64), (arr.shape[1],))
    if np.any(base == 0.0):
        raise ValueError("baseline score of zero cannot normalize")
    if not np.all(np.isfinite(base)):
        raise ValueError("baseline contains non-finite entries")
    out = arr / base
    return out if np.ndim(scores) == 2 else out[:, 0]


def mean(scores) -> float:
    return float(np.mean(_matrix(scores)))


def median(scores) -> float:
    return float(np.median(_matrix(scores)))


def iqm(scores) -> float:
    """Mean after dropping floor(n/4) values from each end of the sorted scores."""
    flat = np.sort(_matrix(scores).ravel())
    n = flat.size
    if n < 4:
        raise ValueError(f"IQM needs at least 4 values, got {n}")
    cut = n // 4
    return float(np.mean(flat[cut : n - cut]))


def optimality_gap(scores, threshold: float = 1.0) -> float:
    flat = _matrix(scores).ravel()
    return float(np.mean(np.maximum(0.0, threshold - flat)))


AGGREGATES: dict[str, Aggregate] = {
    "mean": mean,
    "median": median,
    "iqm": iqm,
    "og": optimality_gap,
}


def bootstrap_ci(
    fn: Aggregate,
    scores,
    n_resamples: int = 2000,
    confidence: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval, resampling runs within each task."""
    arr = _matrix(scores)
    n_runs, n_tasks = arr.shape
    if n_runs < 2:
        raise ValueError(f"bootstrap needs at least 2 runs, got {n_runs}")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if n_resamples < 1:
        raise ValueError("n_resamples must be positive")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n_runs, size=(n_resamples, n_runs, n_tasks))
    cols = np.arange(n_tasks)
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        stats[b] = fn(arr[idx[b], cols])
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def summarize(scores, n_resamples: int = 2000, confidence: float = 0.95, seed: int = 0) -> dict[str, dict[str, float]]:
    """Point estimate and interval for every aggregate.

    A single run gives a degenerate interval at the point estimate. IQM falls
    back to the plain mean when fewer than four scores exist.
    """
    arr = _matrix(scores)
    out: dict[str, dict[str, float]] = {}
    for name, fn in AGGREGATES.items():
        if name == "iqm" and arr.size < 4:
            fn = mean
        point = fn(arr)
        if arr.shape[0] < 2:
            lo = hi = point
        else:
            lo, hi = bootstrap_ci(fn, arr, n_resamples, confidence, seed)
        out[name] = {"point": point, "low": lo, "high": hi}
    return out
