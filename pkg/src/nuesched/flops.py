"""Compute-cost accounting for on-policy training, in exact integers.

Only network-involved work is counted:

* sampling: one batch-1 forward of every network per env per rollout step,
  plus one more per env to bootstrap the value of the final observation;
* update: forward over every minibatch sample for each epoch, with the
  backward pass charged at twice the forward cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

SAMPLING = "sampling"
UPDATE = "update"

# Procgen setting used to sanity-check the closed form.
REFERENCE_CONSTANTS = dict(
    o_bs1=528384,
    n_envs=64,
    episode_len=256,
    batch_size=2048,
    n_batches=32,
    n_episodes=1525,
)


@dataclass(frozen=True)
class FlopsModel:
    o_bs1: int
    n_envs: int
    episode_len: int
    batch_size: int
    n_batches: int
    n_episodes: int = 1
    backward_ratio: int = 2

    def __post_init__(self):
        for name in ("o_bs1", "n_envs", "batch_size", "n_batches", "n_episodes", "backward_ratio"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.episode_len, int) or self.episode_len < 0:
            raise ValueError(f"episode_len must be a nonnegative integer, got {self.episode_len!r}")


def o_sampling(model: FlopsModel) -> int:
    return (model.episode_len + 1) * model.n_envs * model.o_bs1


def o_forward(model: FlopsModel, k: int) -> int:
    if k < 0:
        raise ValueError("epoch count must be >= 0")
    return model.o_bs1 * model.batch_size * model.n_batches * k


def o_update(model: FlopsModel, k: int) -> int:
    return o_forward(model, k) * (1 + model.backward_ratio)


def o_total(model: FlopsModel, ks: int | Sequence[int]) -> int:
    """Total over ``model.n_episodes``; ``ks`` is one epoch count per episode.

    A bare integer means the same count every episode.
    """
    if isinstance(ks, int):
        ks = [ks] * model.n_episodes
    ks = list(ks)
    if len(ks) != model.n_episodes:
        raise ValueError(f"got {len(ks)} epoch counts for {model.n_episodes} episodes")
    s = o_sampling(model)
    return sum(s + o_update(model, k) for k in ks)


@dataclass(frozen=True)
class LedgerEntry:
    episode: int
    phase: str
    amount: int


@dataclass
class FlopsLedger:
    sampling_total: int = 0
    update_total: int = 0
    entries: list[LedgerEntry] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.sampling_total + self.update_total

    def per_episode(self) -> dict[int, dict[str, int]]:
        out: dict[int, dict[str, int]] = {}
        for e in self.entries:
            slot = out.setdefault(e.episode, {SAMPLING: 0, UPDATE: 0})
            slot[e.phase] += e.amount
        return out


def ledger_record(ledger: FlopsLedger, phase: str, amount: int, episode: int = 0) -> FlopsLedger:
    if not isinstance(amount, int) or isinstance(amount, bool):
        raise TypeError(f"FLOPS amounts are integers, got {type(amount).__name__}")
    if amount < 0:
        raise ValueError(f"negative FLOPS amount {amount}")
    if phase == SAMPLING:
        ledger.sampling_total += amount
    elif phase == UPDATE:
        ledger.update_total += amount
    else:
        raise ValueError(f"unknown phase {phase!r}")
    ledger.entries.append(LedgerEntry(episode, phase, amount))
    return ledger


def merge(ledgers: Iterable[FlopsLedger]) -> FlopsLedger:
    out = FlopsLedger()
    for led in ledgers:
        out.sampling_total += led.sampling_total
        out.update_total += led.update_total
        out.entries.extend(led.entries)
    return out
