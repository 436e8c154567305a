"""Bandit schedulers that pick the number of update epochs (NUE) per episode.

Each arm is one candidate epoch count. Before every update phase a scheduler
selects an arm; afterwards it is told the reward signal observed with the
freshly updated policy.

The functional core (``ucb_select``/``ucb_commit`` and friends) operates on
explicit state records. The ``*Scheduler`` classes wrap them with a uniform
``select()``/``commit()`` interface and a decision history for logging.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NueSet:
    """Ordered candidate epoch counts. Order drives tie-breaking and cycling."""

    values: tuple[int, ...]

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise ValueError("NUE set must be nonempty")
        if any(v < 1 for v in vals):
            raise ValueError(f"NUE values must be >= 1, got {vals}")
        if len(set(vals)) != len(vals):
            raise ValueError(f"NUE values must be distinct, got {vals}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def index(self, k: int) -> int:
        try:
            return self.values.index(int(k))
        except ValueError:
            raise ValueError(f"{k} is not in NUE set {self.values}") from None


def _check_finite(x: float, what: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite {what}: {x!r} (value network diverged?)")
    return x


# --------------------------------------------------------------------- UCB


@dataclass
class UcbState:
    counts: list[int]
    windows: list[deque]
    q_values: list[float]
    c: float
    window: int
    t: int = 1

    @classmethod
    def initial(cls, nue: NueSet, c: float = 5.0, window: int = 10) -> "UcbState":
        if c < 0:
            raise ValueError("exploration coefficient must be >= 0")
        if window < 1:
            raise ValueError("window must be >= 1")
        n = len(nue)
        return cls(
            counts=[1] * n,
            windows=[deque(maxlen=window) for _ in range(n)],
            q_values=[0.0] * n,
            c=float(c),
            window=int(window),
        )


def ucb_scores(state: UcbState) -> list[float]:
    log_t = math.log(state.t)
    return [
        q + state.c * math.sqrt(log_t / n)
        for q, n in zip(state.q_values, state.counts)
    ]


def ucb_select(state: UcbState, nue: NueSet) -> int:
    """Arm maximizing ``Q + c*sqrt(log t / N)``; earliest position wins ties."""
    scores = ucb_scores(state)
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return nue.values[best]


def ucb_commit(state: UcbState, nue: NueSet, k: int, mean_return: float) -> UcbState:
    """Push ``mean_return`` into arm ``k``'s FIFO window and refresh its Q.

    Q is the mean over the entries actually present, so it is not dragged
    toward zero while the window is still filling.
    """
    i = nue.index(k)
    r = _check_finite(mean_return, "mean return")
    win = state.windows[i]
    win.append(r)
    state.q_values[i] = math.fsum(win) / len(win)
    state.counts[i] += 1
    state.t += 1
    return state


# --------------------------------------------------------------------- GTS


@dataclass
class GtsState:
    means: list[float]
    variances: list[float]
    counts: list[int]
    eta: float
    var_floor: float = 1e-6

    @classmethod
    def initial(
        cls,
        nue: NueSet,
        eta: float = 1.0,
        prior_mean: float = 0.0,
        prior_var: float = 1.0,
        var_floor: float = 1e-6,
    ) -> "GtsState":
        if eta < 0:
            raise ValueError("eta must be >= 0")
        if var_floor < 0 or prior_var < 0:
            raise ValueError("variances must be >= 0")
        n = len(nue)
        return cls(
            means=[float(prior_mean)] * n,
            variances=[max(float(prior_var), var_floor)] * n,
            counts=[1] * n,
            eta=float(eta),
            var_floor=float(var_floor),
        )


def gts_select(state: GtsState, nue: NueSet, rng: np.random.Generator) -> int:
    """Draw one Normal sample per arm and return the arm with the largest."""
    samples = rng.normal(np.asarray(state.means), np.sqrt(np.asarray(state.variances)))
    return nue.values[int(np.argmax(samples))]


def gts_select_many(state: GtsState, nue: NueSet, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent selections; consumes the stream exactly like ``n`` calls to gts_select."""
    samples = rng.normal(np.asarray(state.means), np.sqrt(np.asarray(state.variances)), size=(n, len(nue)))
    return np.asarray(nue.values)[np.argmax(samples, axis=1)]


def gts_commit(state: GtsState, nue: NueSet, k: int, q_signal: float) -> GtsState:
    i = nue.index(k)
    q = _check_finite(q_signal, "q signal")
    mu, var, n = state.means[i], state.variances[i], state.counts[i]
    diff = q - mu
    state.means[i] = mu + state.eta * diff / (n + 1)
    state.variances[i] = max(state.var_floor, (n * var + diff * diff) / (n + 1))
    state.counts[i] = n + 1
    return state


# --------------------------------------------------------------- round robin


@dataclass
class RrsState:
    t: int = 0


def rrs_select(state: RrsState, nue: NueSet) -> int:
    k = nue.values[state.t % len(nue)]
    state.t += 1
    return k


def fixed_select(k: int) -> int:
    if k < 1:
        raise ValueError(f"fixed NUE must be >= 1, got {k}")
    return k


# ---------------------------------------------------------------- wrappers


@dataclass
class Decision:
    episode: int
    k: int
    signal: float


@dataclass
class Scheduler:
    """Common select/commit bookkeeping. Subclasses implement ``_select``."""

    nue: NueSet
    history: list[Decision] = field(default_factory=list, init=False)
    _pending: int | None = field(default=None, init=False, repr=False)

    name = "base"

    def select(self) -> int:
        if self._pending is not None:
            raise RuntimeError("select() called twice without commit()")
        self._pending = self._select()
        return self._pending

    def commit(self, k: int, signal: float) -> None:
        if self._pending is None or k != self._pending:
            raise RuntimeError(f"commit({k}) does not match pending selection {self._pending}")
        signal = _check_finite(signal, "reward signal")
        self._commit(k, signal)
        self.history.append(Decision(len(self.history), k, signal))
        self._pending = None

    def _select(self) -> int:
        raise NotImplementedError

    def _commit(self, k: int, signal: float) -> None:
        pass

    def selection_counts(self) -> dict[int, int]:
        counts = {k: 0 for k in self.nue}
        for d in self.history:
            counts[d.k] += 1
        return counts


@dataclass
class FixedScheduler(Scheduler):
    k: int = 3
    name = "fixed"

    def __post_init__(self):
        fixed_select(self.k)

    def _select(self) -> int:
        return fixed_select(self.k)


@dataclass
class RoundRobinScheduler(Scheduler):
    state: RrsState = field(default_factory=RrsState)
    name = "rrs"

    def _select(self) -> int:
        return rrs_select(self.state, self.nue)


@dataclass
class UcbScheduler(Scheduler):
    c: float = 5.0
    window: int = 10
    state: UcbState = field(init=False)
    name = "ucb"

    def __post_init__(self):
        self.state = UcbState.initial(self.nue, self.c, self.window)

    def _select(self) -> int:
        return ucb_select(self.state, self.nue)

    def _commit(self, k: int, signal: float) -> None:
        ucb_commit(self.state, self.nue, k, signal)


@dataclass
class GtsScheduler(Scheduler):
    """Gaussian Thompson sampling fed with a windowed mean of the signal.

    The posterior update consumes the sliding-window average of each arm's
    recent signals, the same Q estimate UCB uses.
    """

    eta: float = 1.0
    window: int = 10
    prior_mean: float = 0.0
    prior_var: float = 1.0
    var_floor: float = 1e-6
    seed: int = 0
    state: GtsState = field(init=False)

    name = "gts"

    def __post_init__(self):
        self.state = GtsState.initial(
            self.nue, self.eta, self.prior_mean, self.prior_var, self.var_floor
        )
        self._windows = [deque(maxlen=self.window) for _ in self.nue]
        self._rng = np.random.default_rng(self.seed)

    def _select(self) -> int:
        return gts_select(self.state, self.nue, self._rng)

    def _commit(self, k: int, signal: float) -> None:
        win = self._windows[self.nue.index(k)]
        win.append(signal)
        gts_commit(self.state, self.nue, k, math.fsum(win) / len(win))


SCHEDULERS = {
    "fixed": FixedScheduler,
    "rrs": RoundRobinScheduler,
    "ucb": UcbScheduler,
    "gts": GtsScheduler,
}


def make_scheduler(name: str, nue, **kwargs) -> Scheduler:
    try:
        cls = SCHEDULERS[name]
    except KeyError:
        raise ValueError(f"unknown scheduler {name!r}; expected one of {sorted(SCHEDULERS)}") from None
    if not isinstance(nue, NueSet):
        nue = NueSet(tuple(nue))
    return cls(nue, **kwargs)
