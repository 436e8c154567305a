from __future__ import annotations

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import fd_max_rel_error, fd_setup, gae_bruteforce

from nuesched.config import config_from_dict
from nuesched.envs import EnvSpec, VecEnv
from nuesched.flops import FlopsLedger, o_sampling, o_total
from nuesched.ppo import (
    Agent,
    Minibatch,
    RolloutBuffer,
    TrainingDiverged,
    action_log_prob,
    act,
    apply_transform,
    categorical_entropy,
    categorical_kl,
    collect_rollout,
    compute_gae,
    drac_policy_reg,
    drac_value_reg,
    flops_model,
    load_checkpoint,
    loss_and_grads,
    make_agent,
    mean_estimated_return,
    ppo_policy_loss,
    ppo_value_loss,
    predict_values,
    save_checkpoint,
    train,
    update_phase,
)
from nuesched.tinynet import NetArch, net_forward, net_init

TINY = {"n_episodes": 6, "n_envs": 4, "rollout_len": 16, "net": {"policy_hidden": [16], "value_hidden": [16]}}


def _buffer(rewards, values, dones):
    r = np.asarray(rewards, float)[:, None]
    return RolloutBuffer(
        observations=np.zeros((len(r), 1, 1)),
        actions=np.zeros((len(r), 1), np.int64),
        log_probs=np.zeros((len(r), 1)),
        rewards=r,
        values=np.asarray(values, float)[:, None],
        dones=np.asarray(dones, bool)[:, None],
    )


# -------------------------------------------------------------------- GAE


def test_gae_single_terminal_step():
    buf = compute_gae(_buffer([1.0], [0.5, 9.0], [True]), 0.99, 0.95)
    assert buf.advantages[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert buf.returns[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_gae_lambda_zero_is_td():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=8), rng.normal(size=9)
    d = rng.random(8) < 0.3
    buf = compute_gae(_buffer(r, v, d), 0.9, 0.0)
    td = r + 0.9 * v[1:] * (1 - d) - v[:-1]
    assert np.allclose(buf.advantages[:, 0], td, atol=1e-12)


def test_gae_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(200):
        r, v = rng.normal(size=10), rng.normal(size=11)
        d = rng.random(10) < 0.25
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        buf = compute_gae(_buffer(r, v, d), gamma, lam)
        assert np.max(np.abs(buf.advantages[:, 0] - gae_bruteforce(r, v, d, gamma, lam))) < 1e-8


def test_gae_lambda_one_telescopes():
    rng = np.random.default_rng(2)
    r, v = rng.normal(size=12), rng.normal(size=13)
    gamma = 0.97
    buf = compute_gae(_buffer(r, v, np.zeros(12, bool)), gamma, 1.0)
    for t in range(12):
        disc = sum(gamma**i * r[t + i] for i in range(12 - t)) + gamma ** (12 - t) * v[12]
        assert buf.returns[t, 0] == pytest.approx(disc, abs=1e-8)


def test_gae_returns_identity():
    rng = np.random.default_rng(3)
    buf = compute_gae(_buffer(rng.normal(size=5), rng.normal(size=6), rng.random(5) < 0.5), 0.99, 0.95)
    assert np.allclose(buf.returns, buf.advantages + buf.values[:-1])


# ----------------------------------------------------------------- losses


@pytest.mark.parametrize(
    "ratio,adv,expected",
    [(1.0, 1.0, -1.0), (1.5, 1.0, -1.2), (0.5, -1.0, 0.8)],
)
def test_policy_loss_hand_values(ratio, adv, expected):
    assert float(ppo_policy_loss(np.log(ratio), 0.0, adv, 0.2)) == pytest.approx(expected, abs=1e-12)


@given(
    lp_new=st.floats(-5, 5),
    lp_old=st.floats(-5, 5),
    adv=st.floats(-10, 10),
    eps=st.floats(0.01, 0.5),
)
def test_policy_loss_lower_bound(lp_new, lp_old, adv, eps):
    assert float(ppo_policy_loss(lp_new, lp_old, adv, eps)) >= -(1 + eps) * abs(adv) - 1e-9


def test_value_loss_hand_values():
    assert float(ppo_value_loss(1.0, 1.0, 1.0, 0.2)) == 0.0
    assert float(ppo_value_loss(1.0, 0.0, 1.0, None)) == 0.0
    assert float(ppo_value_loss(2.0, 0.0, 0.0, None)) == 4.0
    assert float(ppo_value_loss(0.5, 0.0, 1.0, 0.2)) == pytest.approx(0.64, abs=1e-12)


def test_kl_hand_value():
    p = np.log([[0.5, 0.5]])
    q = np.log([[0.9, 0.1]])
    expected = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
    assert expected == pytest.approx(0.5108, abs=1e-4)
    assert categorical_kl(p, q)[0] == pytest.approx(expected, abs=1e-12)


def test_kl_nonnegative_random_pairs():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(1000, 5)) * 3, rng.normal(size=(1000, 5)) * 3
    assert np.all(categorical_kl(a, b) >= -1e-12)
    assert np.allclose(categorical_kl(a, a), 0.0, atol=1e-12)


def test_entropy_max_at_uniform():
    rng = np.random.default_rng(0)
    h_uniform = categorical_entropy(np.zeros((1, 6)))[0]
    assert h_uniform == pytest.approx(np.log(6))
    pert = rng.normal(scale=0.5, size=(500, 6))
    assert np.all(categorical_entropy(pert) < h_uniform)


def test_drac_regs_identity_zero_and_hand_value():
    spec = EnvSpec(kind="proc_maze", view="global")
    agent = make_agent(spec, [16], [16], 0)
    obs = np.random.default_rng(0).random((5, spec.obs_dim))
    assert drac_policy_reg(agent, obs, obs) == pytest.approx(0.0, abs=1e-15)
    assert drac_value_reg(agent, obs, obs) == 0.0
    # V(s) = 1.0 and V(f(s)) = 0.4 through a bias-only value net
    agent.value.weights[-1][...] = 0.0
    agent.value.biases[-1][...] = 1.0
    other = agent.copy()
    other.value.biases[-1][...] = 0.4
    v1, v2 = predict_values(agent, obs), predict_values(other, obs)
    assert float(np.mean((v1 - v2) ** 2)) == pytest.approx(0.36)


# ------------------------------------------------------------- transforms


def test_transforms():
    rng = np.random.default_rng(0)
    shape = (3, 5, 5)
    obs = rng.random((4, 75))
    flip = apply_transform(obs, "horizontal_flip", rng, shape)
    assert np.array_equal(apply_transform(flip, "horizontal_flip", rng, shape), obs)
    assert np.array_equal(apply_transform(np.zeros((4, 75)), "random_translate", rng, shape), np.zeros((4, 75)))
    assert apply_transform(obs, "identity", rng, shape) is obs
    changed = [not np.array_equal(apply_transform(obs, "uniform_noise", rng), obs) for _ in range(100)]
    assert all(changed)
    noisy = apply_transform(obs, "uniform_noise", rng)
    assert np.max(np.abs(noisy - obs)) <= 0.05


def test_translate_moves_one_cell():
    obs = np.zeros((1, 1, 5, 5))
    obs[0, 0, 2, 2] = 1.0
    out = apply_transform(obs.reshape(1, -1), "random_translate", np.random.default_rng(3), (1, 5, 5))
    y, x = np.argwhere(out.reshape(5, 5))[0]
    assert abs(y - 2) <= 1 and abs(x - 2) <= 1 and out.sum() == 1.0


def test_transform_errors():
    with pytest.raises(ValueError):
        apply_transform(np.zeros((1, 4)), "rotate", None, (1, 2, 2))
    with pytest.raises(ValueError):
        apply_transform(np.zeros((1, 4)), "horizontal_flip", None)


# --------------------------------------------------------------- gradients


@pytest.mark.parametrize("value_clip", [0.2, None])
def test_gradients_match_finite_differences(value_clip):
    rng = np.random.default_rng(10)
    for i in range(5):
        agent, mb, cfg = fd_setup(rng, seed=i, value_clip=value_clip)
        err, gap = fd_max_rel_error(agent, mb, cfg)
        assert err < 1e-4 and gap < 1e-12


def test_drac_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    for i in range(3):
        agent, mb, cfg = fd_setup(rng, seed=i)
        err, gap = fd_max_rel_error(agent, mb, cfg, drac=True)
        assert err < 1e-4 and gap < 1e-12


def test_drac_identity_adds_nothing():
    rng = np.random.default_rng(12)
    agent, mb, cfg = fd_setup(rng)
    mb.obs_aug = mb.obs
    plain = loss_and_grads(agent, mb, cfg)
    reg = loss_and_grads(agent, mb, cfg, drac=True)
    assert reg.policy_reg == pytest.approx(0.0, abs=1e-15) and reg.value_reg == 0.0
    for a, b in zip(plain.policy_grads.arrays() + plain.value_grads.arrays(), reg.policy_grads.arrays() + reg.value_grads.arrays()):
        assert np.max(np.abs(a - b)) < 1e-10


def test_continuous_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    agent = Agent(
        net_init(NetArch((6, 8, 2)), 0, output_gain=1.0),
        net_init(NetArch((6, 8, 1)), 1),
        False,
        np.array([-0.3, 0.2]),
        np.zeros(2),
        np.zeros(2),
    )
    cfg = config_from_dict({"env": {"kind": "point_mass"}, "ppo": {"value_clip": None}})
    obs = rng.normal(size=(12, 6))
    means, _ = net_forward(agent.policy, obs)
    actions = means + rng.normal(scale=0.5, size=means.shape)
    # old log-probs equal to the current ones keep every ratio at 1, far from the clip
    mb = Minibatch(obs, actions, action_log_prob(agent, means, actions), rng.normal(size=12), rng.normal(size=12), np.zeros(12))
    res = loss_and_grads(agent, mb, cfg)
    arrays = agent.policy.arrays() + agent.value.arrays() + [agent.log_std]
    grads = res.policy_grads.arrays() + res.value_grads.arrays() + [res.log_std_grad]
    h = 1e-6
    for arr, g in zip(arrays, grads):
        flat, gf = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            o = flat[i]
            flat[i] = o + h
            up = loss_and_grads(agent, mb, cfg).loss
            flat[i] = o - h
            down = loss_and_grads(agent, mb, cfg).loss
            flat[i] = o
            fd = (up - down) / (2 * h)
            assert abs(fd - gf[i]) / max(abs(fd), abs(gf[i]), 1e-6) < 1e-4


# ----------------------------------------------------------------- rollout


def _setup(spec=None, n_envs=3, seed=0):
    spec = spec or EnvSpec(kind="proc_maze")
    agent = make_agent(spec, [16], [16], seed)
    venv = VecEnv(spec, n_envs, np.random.default_rng(seed))
    return agent, venv, venv.reset()


def test_rollout_shapes_and_ledger():
    agent, venv, obs = _setup(n_envs=1)
    ledger = FlopsLedger()
    buf, _ = collect_rollout(agent, venv, obs, 1, np.random.default_rng(0), ledger=ledger)
    assert buf.values.shape == (2, 1)
    assert ledger.sampling_total == 2 * agent.o_bs1


def test_rollout_reproducible_and_log_probs_consistent():
    bufs = []
    for _ in range(2):
        agent, venv, obs = _setup()
        bufs.append(collect_rollout(agent, venv, obs, 20, np.random.default_rng(5))[0])
    a, b = bufs
    assert np.array_equal(a.observations, b.observations) and np.array_equal(a.actions, b.actions)
    agent, _, _ = _setup()
    flat_obs = a.observations.reshape(-1, a.observations.shape[-1])
    logits, _ = net_forward(agent.policy, flat_obs)
    lp = action_log_prob(agent, logits, a.actions.reshape(-1))
    assert np.max(np.abs(lp - a.log_probs.reshape(-1))) < 1e-12


def test_mean_estimated_return():
    agent, venv, obs = _setup()
    buf, _ = collect_rollout(agent, venv, obs, 10, np.random.default_rng(0))
    assert mean_estimated_return(agent, buf) == pytest.approx(float(np.mean(buf.values[:-1])), abs=1e-12)
    agent.value.weights[-1][...] = 0.0
    agent.value.biases[-1][...] = 2.5
    assert mean_estimated_return(agent, buf) == pytest.approx(2.5)


def test_act_discrete_probabilities_and_greedy():
    agent, _, obs = _setup()
    out = act(agent, obs, None, deterministic=True)
    assert np.array_equal(out.actions, np.argmax(out.params, axis=1))
    probs = np.exp(out.params - out.params.max(1, keepdims=True))
    probs /= probs.sum(1, keepdims=True)
    assert np.allclose(probs.sum(1), 1.0, atol=1e-9)


def test_act_sampling_frequencies():
    spec = EnvSpec(kind="proc_maze")
    agent = make_agent(spec, [8], [8], 0)
    agent.policy.weights[-1][...] = 0.0
    agent.policy.biases[-1][...] = np.log([0.1, 0.2, 0.3, 0.4])
    obs = np.zeros((20_000, spec.obs_dim))
    acts = act(agent, obs, np.random.default_rng(0)).actions
    freq = np.bincount(acts, minlength=4) / len(acts)
    assert np.allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=0.01)


# ------------------------------------------------------------ update phase


def _gae_buffer(cfg, seed=0):
    agent = make_agent(cfg.env, cfg.net.policy_hidden, cfg.net.value_hidden, seed)
    venv = VecEnv(cfg.env, cfg.n_envs, np.random.default_rng(seed))
    buf, _ = collect_rollout(agent, venv, venv.reset(), cfg.rollout_len, np.random.default_rng(seed))
    return agent, compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda)


def test_update_counts_and_ledger_linearity():
    cfg = config_from_dict(TINY)
    totals = {}
    for k in (1, 2, 4):
        agent, buf = _gae_buffer(cfg)
        ledger = FlopsLedger()
        stats = update_phase(agent, buf, k, cfg, ledger=ledger)
        assert stats.optimizer_steps == k * cfg.ppo.n_minibatches
        assert agent.policy.step_count == agent.value.step_count == stats.optimizer_steps
        totals[k] = ledger.update_total
    assert totals[2] == 2 * totals[1] and totals[4] == 2 * totals[2]
    assert totals[1] == 3 * cfg.n_envs * cfg.rollout_len * agent.o_bs1


def test_update_rejects_zero_epochs():
    cfg = config_from_dict(TINY)
    agent, buf = _gae_buffer(cfg)
    with pytest.raises(ValueError):
        update_phase(agent, buf, 0, cfg)


def test_zero_learning_rate_freezes_params():
    cfg = config_from_dict({**TINY, "adam": {"learning_rate": 0.0}})
    agent, buf = _gae_buffer(cfg)
    before = [a.copy() for a in agent.policy.arrays() + agent.value.arrays()]
    update_phase(agent, buf, 3, cfg)
    after = agent.policy.arrays() + agent.value.arrays()
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_update_detects_divergence():
    cfg = config_from_dict(TINY)
    agent, buf = _gae_buffer(cfg)
    buf.returns[0, 0] = np.inf
    with pytest.raises(TrainingDiverged):
        update_phase(agent, buf, 1, cfg)


def test_drac_update_runs():
    cfg = config_from_dict({**TINY, "algorithm": "ppo_drac"})
    agent, buf = _gae_buffer(cfg)
    stats = update_phase(agent, buf, 1, cfg)
    assert stats.policy_reg >= 0.0 and stats.value_reg >= 0.0


# ---------------------------------------------------------------- training


def test_train_log_schema_and_budget():
    cfg = config_from_dict({**TINY, "scheduler": {"name": "rrs", "nue": [3, 2, 1]}})
    fh = io.StringIO()
    res = train(cfg, 0, log_file=fh)
    lines = [json.loads(x) for x in fh.getvalue().splitlines()]
    assert len(lines) == cfg.n_episodes
    assert [x["selected_K"] for x in lines] == [3, 2, 1, 3, 2, 1]
    keys = {"episode", "env_steps", "selected_K", "mean_episodic_return", "v_bar", "policy_loss",
            "value_loss", "entropy", "flops_sampling", "flops_update"}
    assert set(lines[0]) == keys
    assert lines[-1]["flops_sampling"] + lines[-1]["flops_update"] == res.ledger.total
    assert res.total_optimizer_steps == sum(x["selected_K"] for x in lines) * cfg.ppo.n_minibatches


def test_train_ledger_matches_closed_form():
    # live totals = closed form over the logged K sequence plus the warm-up rollout
    cfg = config_from_dict({**TINY, "scheduler": {"name": "ucb", "nue": [3, 2, 1], "c": 1.0}})
    res = train(cfg, 1)
    model = flops_model(cfg, res.agent)
    ks = [r["selected_K"] for r in res.records]
    assert res.ledger.total == o_total(model, ks) + o_sampling(model)


def test_fixed_scheduler_equals_plain_loop():
    cfg = config_from_dict({**TINY, "scheduler": {"name": "fixed", "fixed_k": 2}})
    a = train(cfg, 4)
    b = train(cfg, 4)
    assert a.records == b.records
    assert {r["selected_K"] for r in a.records} == {2}


def test_train_continuous_and_drac_smoke():
    train(config_from_dict({**TINY, "env": {"kind": "point_mass"}, "n_episodes": 2}), 0)
    train(config_from_dict({**TINY, "env": {"kind": "key_door"}, "algorithm": "ppo_drac", "n_episodes": 2}), 0)


def test_checkpoint_round_trip(tmp_path):
    for kind in ("proc_maze", "point_mass"):
        agent = make_agent(EnvSpec(kind=kind), [8], [8], 3)
        save_checkpoint(tmp_path / "c.bin", agent)
        back = load_checkpoint(tmp_path / "c.bin")
        assert back.discrete == agent.discrete
        for x, y in zip(agent.policy.arrays() + agent.value.arrays(), back.policy.arrays() + back.value.arrays()):
            assert np.array_equal(x, y)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.bin")


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6))
def test_policy_loss_zero_advantage(logits):
    assert float(ppo_policy_loss(np.array(logits), np.array(logits)[::-1], 0.0, 0.2).sum()) == 0.0
