"""Procedurally generated desk-scale environments.

``proc_maze``
    Perfect maze on an odd-sized wall grid; reach the goal. +1 on arrival,
    -0.01 per other step unless ``sparse``.
``key_door``
    Two rooms joined by a locked door. Pick up the key (action 4) when it is
    adjacent, open the door (action 5) while carrying it, reach the goal.
    Only success pays: ``1 - 0.9 * steps / max_steps``.
``point_mass``
    Continuous 2-D point with force control in the unit box; reward is the
    negative distance to the target every step.

Layouts are pure functions of ``(spec, level_seed)``. Grid observations are
one-hot channel stacks (walls, agent, [key, door,] goal) over the grid
interior; the border ring is always wall and is dropped. The default
``egocentric`` view re-centres that stack on the agent, which lets a small
MLP reuse what it learns across differently shaped levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from . import kernels
from ._kernels_py import DOOR, GOAL, KEY, WALL, SplitMix64

Kind = Literal["proc_maze", "key_door", "point_mass"]

_DEFAULTS = {
    "proc_maze": dict(width=9, height=9, max_episode_steps=100),
    "key_door": dict(width=6, height=6, max_episode_steps=360),
    "point_mass": dict(width=0, height=0, max_episode_steps=200),
}

POINT_MASS_RADIUS = 0.05
SEED_SPACE = 2**64


class EnvSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Kind = "proc_maze"
    width: int | None = None
    height: int | None = None
    max_episode_steps: int | None = None
    level_mode: Literal["fixed_set", "full_distribution"] = "fixed_set"
    n_levels: int = 200
    sparse: bool = False
    view: Literal["egocentric", "global"] = "egocentric"
    dt: float = 0.05

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            kind = data.get("kind", "proc_maze")
            for key, value in _DEFAULTS.get(kind, {}).items():
                if data.get(key) is None:
                    data[key] = value
        return data

    @model_validator(mode="after")
    def _check(self):
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if self.level_mode == "fixed_set" and self.n_levels < 1:
            raise ValueError("n_levels must be >= 1 in fixed_set mode")
        if self.kind == "proc_maze":
            if self.width < 5 or self.height < 5 or self.width % 2 == 0 or self.height % 2 == 0:
                raise ValueError("proc_maze needs odd width and height >= 5")
        elif self.kind == "key_door":
            if self.width < 5 or self.height < 4:
                raise ValueError("key_door needs width >= 5 and height >= 4")
        elif self.dt <= 0:
            raise ValueError("dt must be positive")
        return self

    @property
    def is_grid(self) -> bool:
        return self.kind != "point_mass"

    @property
    def discrete(self) -> bool:
        return self.is_grid

    @property
    def n_channels(self) -> int:
        return 5 if self.kind == "key_door" else 3

    @property
    def obs_shape(self) -> tuple[int, ...]:
        if not self.is_grid:
            return (6,)
        h, w = self.height - 2, self.width - 2
        if self.view == "egocentric":
            return (self.n_channels, 2 * h - 1, 2 * w - 1)
        return (self.n_channels, h, w)

    @property
    def obs_dim(self) -> int:
        return int(np.prod(self.obs_shape))

    @property
    def n_actions(self) -> int:
        """Discrete action count, or action dimension for point_mass."""
        return {"proc_maze": 4, "key_door": 6, "point_mass": 2}[self.kind]

    @property
    def step_penalty(self) -> float:
        return 0.01 if self.kind == "proc_maze" and not self.sparse else 0.0


# ------------------------------------------------------------------ levels


def sample_level(spec: EnvSpec, rng: np.random.Generator, partition: str = "train") -> int:
    """Train levels come from ``{0..n_levels-1}``; test levels never do."""
    if partition == "train":
        if spec.level_mode == "fixed_set":
            return int(rng.integers(0, spec.n_levels))
        return int(rng.integers(0, SEED_SPACE, dtype=np.uint64))
    if partition == "test":
        excluded = spec.n_levels if spec.level_mode == "fixed_set" else 0
        while True:
            seed = int(rng.integers(0, SEED_SPACE, dtype=np.uint64))
            if seed >= excluded:
                return seed
    raise ValueError(f"unknown partition {partition!r}")


def _point_mass_layout(seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = SplitMix64(seed)
    start = np.array([rng.uniform(), rng.uniform()])
    while True:
        target = np.array([rng.uniform(), rng.uniform()])
        if math.dist(start, target) >= 2 * POINT_MASS_RADIUS:
            return start, target


def generate_grid(spec: EnvSpec, level_seed: int) -> tuple[np.ndarray, int, int]:
    if spec.kind == "proc_maze":
        return kernels.carve_maze(level_seed, spec.height, spec.width)
    return kernels.layout_key_door(level_seed, spec.height, spec.width)


# ------------------------------------------------------------- single env


@dataclass
class EnvState:
    spec: EnvSpec
    level_seed: int
    steps: int = 0
    terminal: bool = False
    grid: np.ndarray | None = None
    agent: np.ndarray | None = None
    carrying: bool = False
    pos: np.ndarray | None = None
    vel: np.ndarray | None = None
    target: np.ndarray | None = None


def _encode(spec: EnvSpec, grid: np.ndarray, agent: np.ndarray) -> np.ndarray:
    return kernels.encode_grid_obs(grid, agent, spec.kind == "key_door", spec.view == "egocentric")


def _point_obs(pos, vel, target) -> np.ndarray:
    return np.concatenate([pos, vel, target - pos], axis=-1)


def observe(state: EnvState) -> np.ndarray:
    if state.spec.is_grid:
        return _encode(state.spec, state.grid[None], state.agent[None])[0]
    return _point_obs(state.pos, state.vel, state.target)


def env_reset(spec: EnvSpec, level_seed: int) -> tuple[EnvState, np.ndarray]:
    state = EnvState(spec, int(level_seed))
    if spec.is_grid:
        grid, ay, ax = generate_grid(spec, level_seed)
        state.grid = np.ascontiguousarray(grid)
        state.agent = np.array([ay, ax], dtype=np.int64)
    else:
        state.pos, state.target = _point_mass_layout(level_seed)
        state.vel = np.zeros(2)
    return state, observe(state)


def _point_mass_step(spec: EnvSpec, pos, vel, target, force):
    """Explicit Euler on a batch; positions clamp to the unit box."""
    force = np.clip(force, -1.0, 1.0)
    new_pos = pos + spec.dt * vel
    new_vel = vel + spec.dt * force
    hit = (new_pos < 0.0) | (new_pos > 1.0)
    new_pos = np.clip(new_pos, 0.0, 1.0)
    new_vel = np.where(hit, 0.0, new_vel)
    dist = np.sqrt(np.sum((new_pos - target) ** 2, axis=-1))
    return new_pos, new_vel, -dist, dist < POINT_MASS_RADIUS


def env_step(state: EnvState, action) -> tuple[np.ndarray, float, bool]:
    if state.terminal:
        raise RuntimeError("env_step called on a terminal state; reset first")
    spec = state.spec
    if spec.is_grid:
        a = int(action)
        if not 0 <= a < spec.n_actions:
            raise ValueError(f"action {a} outside [0, {spec.n_actions})")
        steps = np.array([state.steps], dtype=np.int64)
        carrying = np.array([state.carrying], dtype=np.uint8)
        grid = state.grid[None].copy()
        agent = state.agent[None].copy()
        rewards, dones = kernels.grid_step(
            grid, agent, carrying, steps, np.array([a], dtype=np.int64),
            spec.max_episode_steps, spec.step_penalty, spec.kind == "key_door",
        )
        state.grid, state.agent = grid[0], agent[0]
        state.carrying = bool(carrying[0])
        state.steps = int(steps[0])
        reward, done = float(rewards[0]), bool(dones[0])
    else:
        state.pos, state.vel, reward, reached = _point_mass_step(
            spec, state.pos, state.vel, state.target, np.asarray(action, dtype=np.float64)
        )
        state.steps += 1
        reward = float(reward)
        done = bool(reached) or state.steps >= spec.max_episode_steps
    state.terminal = done
    return observe(state), reward, done


def render_level(spec: EnvSpec, level_seed: int) -> str:
    state, _ = env_reset(spec, level_seed)
    if not spec.is_grid:
        return (
            f"point_mass level {level_seed}: start=({state.pos[0]:.3f}, {state.pos[1]:.3f}) "
            f"target=({state.target[0]:.3f}, {state.target[1]:.3f})"
        )
    glyph = {0: ".", WALL: "#", KEY: "k", DOOR: "D", GOAL: "G"}
    rows = [[glyph[int(c)] for c in row] for row in state.grid]
    rows[state.agent[0]][state.agent[1]] = "A"
    return "\n".join("".join(r) for r in rows)


# -------------------------------------------------------------- vectorized


@dataclass
class VecEnv:
    """Synchronous batch of environments with automatic reset.

    Finished episodes are replaced by a fresh level drawn from ``partition``;
    the observation returned for such an env is the first one of the new
    episode, matching the usual vectorized-env convention.
    """

    spec: EnvSpec
    n_envs: int
    rng: np.random.Generator
    partition: str = "train"
    level_seeds: np.ndarray = field(init=False)
    episode_returns: np.ndarray = field(init=False)
    episode_lengths: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.n_envs
        self.level_seeds = np.zeros(n, dtype=np.uint64)
        self.episode_returns = np.zeros(n)
        self.episode_lengths = np.zeros(n, dtype=np.int64)
        self.steps = np.zeros(n, dtype=np.int64)
        if self.spec.is_grid:
            self.grid = np.zeros((n, self.spec.height, self.spec.width), dtype=np.uint8)
            self.agent = np.zeros((n, 2), dtype=np.int64)
            self.carrying = np.zeros(n, dtype=np.uint8)
        else:
            self.pos = np.zeros((n, 2))
            self.vel = np.zeros((n, 2))
            self.target = np.zeros((n, 2))

    def _reset_one(self, i: int) -> None:
        seed = sample_level(self.spec, self.rng, self.partition)
        self.level_seeds[i] = seed
        self.steps[i] = 0
        self.episode_returns[i] = 0.0
        self.episode_lengths[i] = 0
        if self.spec.is_grid:
            grid, ay, ax = generate_grid(self.spec, seed)
            self.grid[i] = grid
            self.agent[i] = (ay, ax)
            self.carrying[i] = 0
        else:
            self.pos[i], self.target[i] = _point_mass_layout(seed)
            self.vel[i] = 0.0

    def observe(self) -> np.ndarray:
        if self.spec.is_grid:
            return _encode(self.spec, self.grid, self.agent)
        return _point_obs(self.pos, self.vel, self.target)

    def reset(self) -> np.ndarray:
        for i in range(self.n_envs):
            self._reset_one(i)
        return self.observe()

    def step(self, actions: np.ndarray):
        """Returns ``(obs, rewards, dones, finished)``.

        ``finished`` lists ``(env_index, episode_return, episode_length)``
        for every episode that ended on this step.
        """
        spec = self.spec
        if spec.is_grid:
            acts = np.ascontiguousarray(actions, dtype=np.int64)
            if acts.min(initial=0) < 0 or acts.max(initial=0) >= spec.n_actions:
                raise ValueError("action out of range")
            rewards, dones = kernels.grid_step(
                self.grid, self.agent, self.carrying, self.steps, acts,
                spec.max_episode_steps, spec.step_penalty, spec.kind == "key_door",
            )
            dones = dones.astype(bool)
        else:
            self.pos, self.vel, rewards, reached = _point_mass_step(
                spec, self.pos, self.vel, self.target, np.asarray(actions, dtype=np.float64)
            )
            self.steps += 1
            dones = reached | (self.steps >= spec.max_episode_steps)
        self.episode_returns += rewards
        self.episode_lengths += 1
        finished = []
        for i in np.flatnonzero(dones):
            finished.append((int(i), float(self.episode_returns[i]), int(self.episode_lengths[i])))
            self._reset_one(int(i))
        return self.observe(), rewards, dones, finished
