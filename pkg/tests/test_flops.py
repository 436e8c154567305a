from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nuesched.flops import (
    REFERENCE_CONSTANTS,
    FlopsLedger,
    FlopsModel,
    ledger_record,
    merge,
    o_forward,
    o_sampling,
    o_total,
    o_update,
)

REF = FlopsModel(**REFERENCE_CONSTANTS)

# hand-multiplied from the reference constants
SAMPLING_REF = 257 * 64 * 528384
FORWARD_REF = 528384 * 2048 * 32 * 3


def test_reference_oracles_by_hand():
    assert SAMPLING_REF == 8_690_860_032
    assert FORWARD_REF == 103_884_521_472
    assert 3 * FORWARD_REF == 311_653_564_416
    assert (SAMPLING_REF + 3 * FORWARD_REF) * 1525 == 488_525_247_283_200


def test_reference_closed_form():
    assert o_sampling(REF) == 8_690_860_032
    assert o_forward(REF, 3) == 103_884_521_472
    assert o_update(REF, 3) == 311_653_564_416
    assert o_total(REF, 3) == 488_525_247_283_200
    assert o_total(REF, [3] * 1525) == 488_525_247_283_200


def test_bootstrap_only_sampling():
    m = FlopsModel(o_bs1=7, n_envs=5, episode_len=0, batch_size=1, n_batches=1)
    assert o_sampling(m) == 35


@given(n=st.integers(1, 1000), t=st.integers(0, 1000), o=st.integers(1, 10**6))
def test_sampling_linear_in_envs(n, t, o):
    a = FlopsModel(o_bs1=o, n_envs=n, episode_len=t, batch_size=1, n_batches=1)
    b = FlopsModel(o_bs1=o, n_envs=2 * n, episode_len=t, batch_size=1, n_batches=1)
    assert o_sampling(b) == 2 * o_sampling(a)


def test_update_linear_in_k():
    assert o_update(REF, 0) == 0
    assert Fraction(o_update(REF, 2), o_update(REF, 1)) == 2
    with pytest.raises(ValueError):
        o_update(REF, -1)


def test_total_all_zero_k_is_sampling_only():
    m = FlopsModel(o_bs1=11, n_envs=3, episode_len=8, batch_size=6, n_batches=4, n_episodes=9)
    assert o_total(m, [0] * 9) == 9 * o_sampling(m)


def test_total_length_mismatch():
    m = FlopsModel(o_bs1=1, n_envs=1, episode_len=1, batch_size=1, n_batches=1, n_episodes=3)
    with pytest.raises(ValueError):
        o_total(m, [3, 2])


def test_round_robin_update_ratio_two_thirds():
    m = FlopsModel(o_bs1=1234, n_envs=8, episode_len=64, batch_size=128, n_batches=4, n_episodes=300)
    rrs = [3, 2, 1] * 100
    fixed = [3] * 300
    upd = lambda ks: sum(o_update(m, k) for k in ks)
    assert Fraction(upd(rrs), upd(fixed)) == Fraction(2, 3)
    assert o_total(m, rrs) - 300 * o_sampling(m) == upd(rrs)


@pytest.mark.parametrize(
    "kw",
    [dict(o_bs1=0), dict(n_envs=-1), dict(batch_size=1.5), dict(episode_len=-1), dict(n_batches=True)],
)
def test_model_validation(kw):
    base = dict(o_bs1=1, n_envs=1, episode_len=1, batch_size=1, n_batches=1)
    with pytest.raises(ValueError):
        FlopsModel(**{**base, **kw})


def test_ledger_basics():
    led = FlopsLedger()
    assert led.total == 0
    ledger_record(led, "sampling", 5)
    ledger_record(led, "sampling", 5)
    assert led.total == 10 and led.sampling_total == 10
    ledger_record(led, "update", 7, episode=1)
    assert led.per_episode() == {0: {"sampling": 10, "update": 0}, 1: {"sampling": 0, "update": 7}}
    assert sum(e.amount for e in led.entries) == led.total


@pytest.mark.parametrize("amount", [-1, 1.5, "3"])
def test_ledger_rejects_bad_amount(amount):
    with pytest.raises((ValueError, TypeError)):
        ledger_record(FlopsLedger(), "update", amount)


def test_ledger_rejects_unknown_phase():
    with pytest.raises(ValueError):
        ledger_record(FlopsLedger(), "backward", 1)


@given(st.lists(st.tuples(st.sampled_from(["sampling", "update"]), st.integers(0, 10**12)), max_size=40))
def test_ledger_monotone_and_consistent(events):
    led = FlopsLedger()
    prev = 0
    for phase, amt in events:
        ledger_record(led, phase, amt)
        assert led.total >= prev
        prev = led.total
    assert led.total == sum(a for _, a in events)


def test_merge_sums():
    a, b = FlopsLedger(), FlopsLedger()
    ledger_record(a, "sampling", 3)
    ledger_record(b, "update", 4)
    m = merge([a, b])
    assert (m.sampling_total, m.update_total) == (3, 4)
