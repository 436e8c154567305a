"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json]

Each kernel runs on identical inputs under both backends; the table reports
the best-of-``repeat`` wall time per call and the speedup. A whole training
episode is timed too, since that is what the kernels are for.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from nuesched import _kernels_py as py

try:
    from nuesched import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def _maze_batch(mod, n=64, size=9):
    grids, agents = [], []
    for s in range(n):
        g, y, x = mod.carve_maze(s, size, size)
        grids.append(g)
        agents.append((y, x))
    return np.ascontiguousarray(grids, dtype=np.uint8), np.ascontiguousarray(agents, dtype=np.int64)


def _cases(mod):
    rng = np.random.default_rng(0)
    grid, agent = _maze_batch(py)
    n = grid.shape[0]
    actions = rng.integers(0, 4, size=n).astype(np.int64)
    rewards = rng.normal(size=(128, 16))
    values = rng.normal(size=(129, 16))
    dones = (rng.random((128, 16)) < 0.05).astype(np.float64)

    def step():
        g, a = grid.copy(), agent.copy()
        mod.grid_step(g, a, np.zeros(n, np.uint8), np.zeros(n, np.int64), actions, 100, 0.01, False)

    return {
        "carve_maze x64 (9x9)": lambda: [mod.carve_maze(s, 9, 9) for s in range(64)],
        "layout_key_door x64": lambda: [mod.layout_key_door(s, 6, 6) for s in range(64)],
        "grid_step (64 envs)": step,
        "encode_grid_obs egocentric (64 envs)": lambda: mod.encode_grid_obs(grid, agent, False, True),
        "gae 128x16": lambda: mod.gae(rewards, values, dones, 0.99, 0.95),
    }


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


_EPISODE = (
    "import time; from nuesched.config import config_from_dict; from nuesched.ppo import train;"
    "cfg = config_from_dict({'n_episodes': 4}); train(cfg, 0);"
    "t = time.perf_counter(); train(config_from_dict({'n_episodes': 20}), 0);"
    "print((time.perf_counter() - t) / 20)"
)


def _episode_time(pure: bool) -> float:
    env = dict(os.environ)
    if pure:
        env["NUESCHED_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", _EPISODE], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--json", action="store_true")
    ap.add_argument("--skip-episode", action="store_true", help="skip the end-to-end episode timing")
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not available; build with `pip install -e .`", file=sys.stderr)
        return 1

    rows = []
    py_cases, cy_cases = _cases(py), _cases(cy)
    for name in py_cases:
        t_py = _best(py_cases[name], args.repeat, args.number)
        t_cy = _best(cy_cases[name], args.repeat, args.number)
        rows.append({"kernel": name, "python_s": t_py, "cython_s": t_cy, "speedup": t_py / t_cy})
    if not args.skip_episode:
        t_py, t_cy = _episode_time(True), _episode_time(False)
        rows.append({"kernel": "train episode (default config)", "python_s": t_py, "cython_s": t_cy,
                     "speedup": t_py / t_cy})

    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'python':>10}  {'cython':>10}  {'speedup':>8}")
    for r in rows:
        print(f"{r['kernel']:<{width}}  {r['python_s'] * 1e3:8.3f}ms  {r['cython_s'] * 1e3:8.3f}ms  {r['speedup']:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
