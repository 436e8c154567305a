"""Pure-Python implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
The two must agree bit-for-bit; ``tests/test_kernels.py`` checks this whenever
the compiled module is importable.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

EMPTY, WALL, KEY, DOOR, GOAL = 0, 1, 2, 3, 4

# up, down, left, right as (dy, dx)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class SplitMix64:
    """Tiny counter-based generator used for level layouts.

    Chosen over numpy's generators because both kernel backends must derive
    the identical layout from a 64-bit level seed.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n

    def uniform(self) -> float:
        return (self.next() >> 11) * (1.0 / 9007199254740992.0)


def carve_maze(seed: int, height: int, width: int):
    """Recursive-backtracker maze on the odd lattice of an HxW wall grid.

    Returns ``(grid, agent_y, agent_x)``; the goal is written into ``grid``.
    """
    rng = SplitMix64(seed)
    grid = np.full((height, width), WALL, dtype=np.uint8)
    ch, cw = (height - 1) // 2, (width - 1) // 2
    ncells = ch * cw
    visited = [False] * ncells

    start = rng.below(ncells)
    visited[start] = True
    grid[2 * (start // cw) + 1, 2 * (start % cw) + 1] = EMPTY
    stack = [start]
    nbrs = [0, 0, 0, 0]
    while stack:
        cur = stack[-1]
        r, c = divmod(cur, cw)
        k = 0
        for dy, dx in MOVES:
            nr, nc = r + dy, c + dx
            if 0 <= nr < ch and 0 <= nc < cw and not visited[nr * cw + nc]:
                nbrs[k] = nr * cw + nc
                k += 1
        if k == 0:
            stack.pop()
            continue
        nxt = nbrs[rng.below(k)]
        nr, nc = divmod(nxt, cw)
        grid[r + nr + 1, c + nc + 1] = EMPTY
        grid[2 * nr + 1, 2 * nc + 1] = EMPTY
        visited[nxt] = True
        stack.append(nxt)

    agent = rng.below(ncells)
    goal = rng.below(ncells - 1)
    if goal >= agent:
        goal += 1
    grid[2 * (goal // cw) + 1, 2 * (goal % cw) + 1] = GOAL
    return grid, 2 * (agent // cw) + 1, 2 * (agent % cw) + 1


def layout_key_door(seed: int, height: int, width: int):
    """Two rooms split by a wall column with one locked door.

    Agent and key share the left room, the goal sits in the right room.
    """
    rng = SplitMix64(seed)
    grid = np.zeros((height, width), dtype=np.uint8)
    grid[0, :] = WALL
    grid[-1, :] = WALL
    grid[:, 0] = WALL
    grid[:, -1] = WALL

    inner_h = height - 2
    wall_x = 2 + rng.below(width - 4)
    door_y = 1 + rng.below(inner_h)
    grid[1:-1, wall_x] = WALL
    grid[door_y, wall_x] = DOOR

    n_left = (wall_x - 1) * inner_h
    agent = rng.below(n_left)
    key = rng.below(n_left - 1)
    if key >= agent:
        key += 1
    grid[1 + key % inner_h, 1 + key // inner_h] = KEY

    n_right = (width - 2 - wall_x) * inner_h
    goal = rng.below(n_right)
    grid[1 + goal % inner_h, wall_x + 1 + goal // inner_h] = GOAL
    return grid, 1 + agent % inner_h, 1 + agent // inner_h


def grid_step(grid, agent, carrying, steps, actions, max_steps, step_penalty, key_door):
    """Advance a batch of grid environments by one step, in place.

    Returns ``(rewards, dones)``.
    """
    n = grid.shape[0]
    rewards = np.zeros(n, dtype=np.float64)
    dones = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        steps[i] += 1
        a = int(actions[i])
        y, x = int(agent[i, 0]), int(agent[i, 1])
        g = grid[i]
        if a < 4:
            ny, nx = y + MOVES[a][0], x + MOVES[a][1]
            cell = g[ny, nx]
            if cell == EMPTY or cell == GOAL:
                y, x = ny, nx
                agent[i, 0] = y
                agent[i, 1] = x
        elif key_door and a == 4:
            if not carrying[i]:
                for dy, dx in MOVES:
                    if g[y + dy, x + dx] == KEY:
                        g[y + dy, x + dx] = EMPTY
                        carrying[i] = 1
                        break
        elif key_door and a == 5:
            if carrying[i]:
                for dy, dx in MOVES:
                    if g[y + dy, x + dx] == DOOR:
                        g[y + dy, x + dx] = EMPTY
                        break

        if g[y, x] == GOAL:
            if key_door:
                rewards[i] = 1.0 - 0.9 * (steps[i] / max_steps)
            else:
                rewards[i] = 1.0
            dones[i] = 1
        else:
            rewards[i] = -step_penalty
            if steps[i] >= max_steps:
                dones[i] = 1
    return rewards, dones


def encode_grid_obs(grid, agent, key_door, egocentric=False):
    """One-hot channel stack over the grid interior, flattened per env.

    Channel order: walls, agent, [key, door,] goal. The egocentric view is a
    ``(2h-1, 2w-1)`` window centred on the agent; cells off the map read as
    wall.
    """
    n, height, width = grid.shape
    h, w = height - 2, width - 2
    inner = grid[:, 1:-1, 1:-1]
    codes = (KEY, DOOR, GOAL) if key_door else (GOAL,)
    n_ch = len(codes) + 2
    if not egocentric:
        obs = np.zeros((n, n_ch, h, w), dtype=np.float64)
        obs[:, 0] = inner == WALL
        for c, code in enumerate(codes, start=2):
            obs[:, c] = inner == code
        obs[np.arange(n), 1, agent[:, 0] - 1, agent[:, 1] - 1] = 1.0
        return obs.reshape(n, -1)

    obs = np.zeros((n, n_ch, 2 * h - 1, 2 * w - 1), dtype=np.float64)
    obs[:, 0] = 1.0
    obs[:, 1, h - 1, w - 1] = 1.0
    for i in range(n):
        y0 = h - agent[i, 0]
        x0 = w - agent[i, 1]
        cells = inner[i]
        obs[i, 0, y0 : y0 + h, x0 : x0 + w] = cells == WALL
        for c, code in enumerate(codes, start=2):
            obs[i, c, y0 : y0 + h, x0 : x0 + w] = cells == code
    return obs.reshape(n, -1)


def gae(rewards, values, dones, gamma, lam):
    """Backward GAE recursion; ``values`` carries one extra bootstrap row."""
    T = rewards.shape[0]
    adv = np.zeros_like(rewards, dtype=np.float64)
    last = np.zeros(rewards.shape[1:], dtype=np.float64)
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv
