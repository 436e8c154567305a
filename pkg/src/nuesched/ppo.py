"""On-policy training: rollouts, GAE, PPO/DrAC losses and the scheduled loop.

Policy and value functions are separate tanh MLPs. Gradients of the total
minibatch loss are derived by hand and pushed through ``tinynet``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from . import kernels
from .bandits import Scheduler, make_scheduler
from .config import ExperimentConfig, SchedulerConfig
from .envs import EnvSpec, VecEnv
from .flops import SAMPLING, UPDATE, FlopsLedger, FlopsModel, ledger_record
from .tinynet import (
    AdamConfig,
    Grads,
    NetArch,
    NetParams,
    adam_step,
    adam_update,
    clip_by_global_norm,
    flops_per_forward,
    net_backward,
    net_forward,
    net_init,
    read_params,
    write_params,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# stream tags mixed into the run seed
_TAG_POLICY, _TAG_VALUE, _TAG_LEVELS, _TAG_ACTIONS, _TAG_SHUFFLE, _TAG_AUG, _TAG_SCHED = range(7)


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------ agent


@dataclass
class Agent:
    policy: NetParams
    value: NetParams
    discrete: bool
    log_std: np.ndarray | None = None
    log_std_m: np.ndarray | None = None
    log_std_v: np.ndarray | None = None

    @property
    def o_bs1(self) -> int:
        """Batch-1 forward cost of policy and value together."""
        return flops_per_forward(self.policy.arch) + flops_per_forward(self.value.arch)

    def copy(self) -> "Agent":
        ls = None if self.log_std is None else self.log_std.copy()
        return Agent(
            self.policy.copy(),
            self.value.copy(),
            self.discrete,
            ls,
            None if ls is None else self.log_std_m.copy(),
            None if ls is None else self.log_std_v.copy(),
        )


def make_agent(spec: EnvSpec, policy_hidden, value_hidden, seed: int) -> Agent:
    obs_dim, n_out = spec.obs_dim, spec.n_actions
    policy = net_init(NetArch((obs_dim, *policy_hidden, n_out)), seed=[seed, _TAG_POLICY], output_gain=0.01)
    value = net_init(NetArch((obs_dim, *value_hidden, 1)), seed=[seed, _TAG_VALUE], output_gain=1.0)
    if spec.discrete:
        return Agent(policy, value, True)
    zeros = np.zeros(n_out)
    return Agent(policy, value, False, zeros.copy(), zeros.copy(), zeros.copy())


@dataclass
class PolicyOutput:
    params: np.ndarray  # logits (discrete) or means (continuous)
    actions: np.ndarray
    log_probs: np.ndarray
    entropy: np.ndarray


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    return -(np.exp(lp) * lp).sum(axis=-1)


def categorical_kl(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    """KL(p || q) per row."""
    lp, lq = log_softmax(p_logits), log_softmax(q_logits)
    return (np.exp(lp) * (lp - lq)).sum(axis=-1)


def action_log_prob(agent: Agent, params: np.ndarray, actions: np.ndarray) -> np.ndarray:
    if agent.discrete:
        return log_softmax(params)[np.arange(len(actions)), actions.astype(np.int64)]
    std = np.exp(agent.log_std)
    z = (actions - params) / std
    return (-0.5 * z * z - agent.log_std - 0.5 * LOG_2PI).sum(axis=-1)


def act(agent: Agent, obs: np.ndarray, rng: np.random.Generator | None, deterministic: bool = False) -> PolicyOutput:
    out, _ = net_forward(agent.policy, obs)
    if agent.discrete:
        lp = log_softmax(out)
        if deterministic:
            actions = np.argmax(out, axis=-1)
        else:
            # inverse-CDF sampling keeps exactly one uniform draw per env
            u = rng.random(len(out))
            cdf = np.cumsum(np.exp(lp), axis=-1)
            actions = np.minimum((cdf < u[:, None]).sum(axis=-1), out.shape[-1] - 1)
        log_probs = lp[np.arange(len(actions)), actions]
        entropy = -(np.exp(lp) * lp).sum(axis=-1)
    else:
        if deterministic:
            actions = out.copy()
        else:
            actions = out + np.exp(agent.log_std) * rng.standard_normal(out.shape)
        log_probs = action_log_prob(agent, out, actions)
        entropy = np.full(len(out), (0.5 + 0.5 * LOG_2PI + agent.log_std).sum())
    return PolicyOutput(out, actions, log_probs, entropy)


def predict_values(agent: Agent, obs: np.ndarray) -> np.ndarray:
    return net_forward(agent.value, obs)[0][..., 0]


# ----------------------------------------------------------------- rollout


class RunningMeanStd:
    def __init__(self):
        self.mean = 0.0
        self.var = 1.0
        self.count = 1e-4

    def update(self, x: np.ndarray) -> None:
        b_mean, b_var, b_count = float(np.mean(x)), float(np.var(x)), x.size
        delta = b_mean - self.mean
        total = self.count + b_count
        m2 = self.var * self.count + b_var * b_count + delta**2 * self.count * b_count / total
        self.mean += delta * b_count / total
        self.var = m2 / total
        self.count = total


class RewardNormalizer:
    """Scale rewards by the running std of the discounted return."""

    def __init__(self, n_envs: int, gamma: float, eps: float = 1e-8):
        self.returns = np.zeros(n_envs)
        self.rms = RunningMeanStd()
        self.gamma = gamma
        self.eps = eps

    def __call__(self, rewards: np.ndarray, dones: np.ndarray) -> np.ndarray:
        self.returns = self.returns * self.gamma + rewards
        self.rms.update(self.returns)
        self.returns[dones] = 0.0
        return rewards / np.sqrt(self.rms.var + self.eps)


@dataclass
class RolloutBuffer:
    observations: np.ndarray  # (T, n, obs_dim)
    actions: np.ndarray  # (T, n) or (T, n, act_dim)
    log_probs: np.ndarray  # (T, n)
    rewards: np.ndarray  # (T, n), possibly normalized
    values: np.ndarray  # (T + 1, n)
    dones: np.ndarray  # (T, n) bool
    raw_rewards: np.ndarray = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    finished_returns: list[float] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_envs(self) -> int:
        return self.rewards.shape[1]


def collect_rollout(
    agent: Agent,
    venv: VecEnv,
    obs: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
    normalizer: RewardNormalizer | None = None,
    ledger: FlopsLedger | None = None,
    episode: int = 0,
) -> tuple[RolloutBuffer, np.ndarray]:
    """Step ``venv`` for ``horizon`` steps with the current policy.

    Returns the filled buffer and the observation to continue from. Every
    step, and the final bootstrap, runs both networks on every env.
    """
    n = venv.n_envs
    act_shape = () if agent.discrete else (venv.spec.n_actions,)
    buf = RolloutBuffer(
        observations=np.zeros((horizon, n, obs.shape[-1])),
        actions=np.zeros((horizon, n, *act_shape), dtype=np.int64 if agent.discrete else np.float64),
        log_probs=np.zeros((horizon, n)),
        rewards=np.zeros((horizon, n)),
        values=np.zeros((horizon + 1, n)),
        dones=np.zeros((horizon, n), dtype=bool),
        raw_rewards=np.zeros((horizon, n)),
    )
    for t in range(horizon):
        out = act(agent, obs, rng)
        buf.observations[t] = obs
        buf.actions[t] = out.actions
        buf.log_probs[t] = out.log_probs
        buf.values[t] = predict_values(agent, obs)
        try:
            obs, rewards, dones, finished = venv.step(out.actions)
        except Exception as err:
            raise RuntimeError(f"environment step failed at rollout step {t}: {err}") from err
        buf.raw_rewards[t] = rewards
        buf.rewards[t] = normalizer(rewards, dones) if normalizer is not None else rewards
        buf.dones[t] = dones
        buf.finished_returns.extend(r for _, r, _ in finished)
    # bootstrap: both networks, mirroring the per-step cost
    act(agent, obs, rng=None, deterministic=True)
    buf.values[horizon] = predict_values(agent, obs)
    if ledger is not None:
        ledger_record(ledger, SAMPLING, (horizon + 1) * n * agent.o_bs1, episode)
    return buf, obs


def compute_gae(buf: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    buf.advantages = kernels.gae(buf.rewards, buf.values, buf.dones.astype(np.float64), gamma, lam)
    buf.returns = buf.advantages + buf.values[:-1]
    return buf


def mean_estimated_return(agent: Agent, buf: RolloutBuffer) -> float:
    obs = buf.observations.reshape(-1, buf.observations.shape[-1])
    return float(np.mean(predict_values(agent, obs)))


# ------------------------------------------------------------------ losses


def ppo_policy_loss(log_prob_new, log_prob_old, advantage, clip_eps: float):
    """Per-sample negated clipped surrogate."""
    ratio = np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))
    adv = np.asarray(advantage)
    return -np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def ppo_value_loss(v_pred, v_pred_old, v_target, value_clip: float | None):
    """Per-sample squared error; with clipping, the max of both errors."""
    v_pred, v_pred_old, v_target = map(np.asarray, (v_pred, v_pred_old, v_target))
    unclipped = (v_pred - v_target) ** 2
    if value_clip is None:
        return unclipped
    v_clipped = v_pred_old + np.clip(v_pred - v_pred_old, -value_clip, value_clip)
    return np.maximum(unclipped, (v_clipped - v_target) ** 2)


def apply_transform(obs: np.ndarray, transform: str, rng: np.random.Generator | None, obs_shape=None) -> np.ndarray:
    """Observation augmentation for a flat batch ``(B, prod(obs_shape))``.

    ``obs_shape`` is ``(channels, height, width)`` for the grid transforms.
    """
    if transform == "identity":
        return obs
    if transform == "uniform_noise":
        return obs + rng.uniform(-0.05, 0.05, size=obs.shape)
    if obs_shape is None or len(obs_shape) != 3:
        raise ValueError(f"{transform} needs a (channels, height, width) observation shape")
    b = obs.shape[0]
    grid = obs.reshape(b, *obs_shape)
    if transform == "horizontal_flip":
        return grid[..., ::-1].reshape(b, -1).copy()
    if transform == "random_translate":
        _, h, w = obs_shape
        shifts = rng.integers(-1, 2, size=(b, 2))
        padded = np.zeros((b, obs_shape[0], h + 2, w + 2))
        padded[:, :, 1:-1, 1:-1] = grid
        out = np.empty_like(grid)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                sel = (shifts[:, 0] == dy) & (shifts[:, 1] == dx)
                if sel.any():
                    out[sel] = padded[sel, :, 1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        return out.reshape(b, -1)
    raise ValueError(f"unknown transform {transform!r}")


def drac_policy_reg(agent: Agent, obs: np.ndarray, obs_aug: np.ndarray) -> float:
    """Mean KL(pi(.|s) || pi(.|f(s))) for a discrete policy."""
    p_logits, _ = net_forward(agent.policy, obs)
    q_logits, _ = net_forward(agent.policy, obs_aug)
    return float(np.mean(categorical_kl(p_logits, q_logits)))


def drac_value_reg(agent: Agent, obs: np.ndarray, obs_aug: np.ndarray) -> float:
    return float(np.mean((predict_values(agent, obs) - predict_values(agent, obs_aug)) ** 2))


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    values_old: np.ndarray
    obs_aug: np.ndarray | None = None


@dataclass
class LossResult:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    policy_reg: float
    value_reg: float
    policy_grads: Grads
    value_grads: Grads
    log_std_grad: np.ndarray | None


def loss_and_grads(
    agent: Agent,
    mb: Minibatch,
    cfg: ExperimentConfig,
    drac: bool = False,
    frozen: Agent | None = None,
) -> LossResult:
    """Total minibatch loss and its exact gradient.

    The DrAC regularizers treat the un-augmented branch as a fixed target;
    ``frozen`` supplies that target (defaults to ``agent`` itself), which is
    what makes the loss checkable against finite differences.
    """
    hp = cfg.ppo
    B = len(mb.advantages)
    adv = mb.advantages
    if hp.adv_normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    # policy
    out, p_cache = net_forward(agent.policy, mb.obs)
    logp = action_log_prob(agent, out, mb.actions)
    ratio = np.exp(logp - mb.log_probs_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps) * adv
    policy_loss = float(np.mean(-np.minimum(surr1, surr2)))
    d_logp = np.where(surr1 <= surr2, -surr1, 0.0) / B

    log_std_grad = None
    if agent.discrete:
        lp = log_softmax(out)
        p = np.exp(lp)
        ent = -(p * lp).sum(axis=-1)
        onehot = np.zeros_like(out)
        onehot[np.arange(B), mb.actions] = 1.0
        g_out = d_logp[:, None] * (onehot - p)
        # d(-c * mean H)/dz = (c / B) * p * (log p + H)
        g_out += (hp.entropy_coef / B) * p * (lp + ent[:, None])
    else:
        var = np.exp(2.0 * agent.log_std)
        diff = mb.actions - out
        ent = np.full(B, (0.5 + 0.5 * LOG_2PI + agent.log_std).sum())
        g_out = d_logp[:, None] * diff / var
        log_std_grad = (d_logp[:, None] * (diff * diff / var - 1.0)).sum(axis=0) - hp.entropy_coef
    entropy = float(np.mean(ent))
    policy_grads, _ = net_backward(agent.policy, p_cache, g_out)

    # value
    v_out, v_cache = net_forward(agent.value, mb.obs)
    v = v_out[:, 0]
    d_err = 2.0 * (v - mb.returns)
    if hp.value_clip is None:
        v_losses = (v - mb.returns) ** 2
        d_v = d_err
    else:
        delta = v - mb.values_old
        v_clipped = mb.values_old + np.clip(delta, -hp.value_clip, hp.value_clip)
        l_un = (v - mb.returns) ** 2
        l_cl = (v_clipped - mb.returns) ** 2
        v_losses = np.maximum(l_un, l_cl)
        inside = np.abs(delta) < hp.value_clip
        d_v = np.where(l_un >= l_cl, d_err, np.where(inside, 2.0 * (v_clipped - mb.returns), 0.0))
    value_loss = float(np.mean(v_losses))
    value_grads, _ = net_backward(agent.value, v_cache, (hp.value_coef / B) * d_v[:, None])

    total = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy
    policy_reg = value_reg = 0.0
    if drac:
        if not agent.discrete:
            raise ValueError("DrAC policy regularizer needs a discrete policy")
        coef = cfg.drac.reg_coef
        target = agent if frozen is None else frozen
        p_tgt_logits = out if frozen is None else net_forward(target.policy, mb.obs)[0]
        v_tgt = v if frozen is None else predict_values(target, mb.obs)

        q_logits, q_cache = net_forward(agent.policy, mb.obs_aug)
        policy_reg = float(np.mean(categorical_kl(p_tgt_logits, q_logits)))
        p_tgt = np.exp(log_softmax(p_tgt_logits))
        q = np.exp(log_softmax(q_logits))
        g_aug, _ = net_backward(agent.policy, q_cache, (coef / B) * (q - p_tgt))
        policy_grads = policy_grads + g_aug

        va_out, va_cache = net_forward(agent.value, mb.obs_aug)
        v_aug = va_out[:, 0]
        value_reg = float(np.mean((v_tgt - v_aug) ** 2))
        g_vaug, _ = net_backward(agent.value, va_cache, ((coef / B) * -2.0 * (v_tgt - v_aug))[:, None])
        value_grads = value_grads + g_vaug
        total += coef * (policy_reg + value_reg)

    return LossResult(
        total, policy_loss, value_loss, entropy, policy_reg, value_reg,
        policy_grads, value_grads, log_std_grad,
    )


# ------------------------------------------------------------ update phase


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    policy_reg: float
    value_reg: float
    optimizer_steps: int


def update_phase(
    agent: Agent,
    buf: RolloutBuffer,
    k: int,
    cfg: ExperimentConfig,
    run_seed: int = 0,
    episode: int = 0,
    ledger: FlopsLedger | None = None,
) -> UpdateStats:
    """Run ``k`` epochs of shuffled minibatch PPO over ``buf``."""
    if k < 1:
        raise ValueError(f"number of update epochs must be >= 1, got {k}")
    if buf.advantages is None:
        raise ValueError("compute_gae must run before update_phase")
    hp = cfg.ppo
    drac = cfg.algorithm == "ppo_drac"
    adam = AdamConfig(**cfg.adam.model_dump())
    obs_shape = cfg.env.obs_shape

    n_total = buf.horizon * buf.n_envs
    n_mb = hp.n_minibatches
    if n_total % n_mb:
        raise ValueError(f"{n_total} samples do not split into {n_mb} minibatches")
    B = n_total // n_mb
    obs = buf.observations.reshape(n_total, -1)
    actions = buf.actions.reshape(n_total, *buf.actions.shape[2:])
    log_probs = buf.log_probs.reshape(-1)
    advantages = buf.advantages.reshape(-1)
    returns = buf.returns.reshape(-1)
    values_old = buf.values[:-1].reshape(-1)

    sums = np.zeros(5)
    steps = 0
    for epoch in range(k):
        perm = np.random.default_rng([run_seed, _TAG_SHUFFLE, episode, epoch]).permutation(n_total)
        aug_rng = np.random.default_rng([run_seed, _TAG_AUG, episode, epoch])
        for j in range(n_mb):
            idx = perm[j * B : (j + 1) * B]
            mb = Minibatch(obs[idx], actions[idx], log_probs[idx], advantages[idx], returns[idx], values_old[idx])
            if drac:
                mb.obs_aug = apply_transform(mb.obs, cfg.drac.transform, aug_rng, obs_shape)
            res = loss_and_grads(agent, mb, cfg, drac=drac)
            if not math.isfinite(res.loss):
                raise TrainingDiverged(
                    f"non-finite loss at episode {episode}, epoch {epoch}, minibatch {j}: "
                    f"policy={res.policy_loss} value={res.value_loss} entropy={res.entropy}"
                )
            p_arrays = res.policy_grads.arrays()
            if res.log_std_grad is not None:
                p_arrays = [*p_arrays, res.log_std_grad]
            clip_by_global_norm(p_arrays, hp.max_grad_norm)
            clip_by_global_norm(res.value_grads.arrays(), hp.max_grad_norm)
            adam_step(agent.policy, res.policy_grads, adam)
            if res.log_std_grad is not None:
                adam_update([agent.log_std], [res.log_std_grad], [agent.log_std_m], [agent.log_std_v],
                            agent.policy.step_count, adam)
            adam_step(agent.value, res.value_grads, adam)
            steps += 1
            sums += (res.policy_loss, res.value_loss, res.entropy, res.policy_reg, res.value_reg)
            if ledger is not None:
                # forward over B samples plus a backward at twice that cost
                ledger_record(ledger, UPDATE, 3 * B * agent.o_bs1, episode)
    means = sums / steps
    return UpdateStats(*map(float, means), optimizer_steps=steps)


# -------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = b"NUECKPT1"


def save_checkpoint(path: str | Path, agent: Agent) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        write_params(fh, agent.policy, agent.log_std)
        write_params(fh, agent.value)


def load_checkpoint(path: str | Path) -> Agent:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        policy, log_std = read_params(fh)
        value, _ = read_params(fh)
    if log_std.size:
        z = np.zeros_like(log_std)
        return Agent(policy, value, False, log_std.copy(), z.copy(), z.copy())
    return Agent(policy, value, True)


# ------------------------------------------------------------------ train


def build_scheduler(sc: SchedulerConfig, run_seed: int) -> Scheduler:
    if sc.name == "fixed":
        return make_scheduler("fixed", (sc.fixed_k,), k=sc.fixed_k)
    if sc.name == "rrs":
        return make_scheduler("rrs", sc.nue)
    if sc.name == "ucb":
        return make_scheduler("ucb", sc.nue, c=sc.c, window=sc.window)
    return make_scheduler(
        "gts", sc.nue, eta=sc.eta, window=sc.window, prior_mean=sc.prior_mean,
        prior_var=sc.prior_var, var_floor=sc.var_floor,
        seed=int(np.random.SeedSequence([run_seed, _TAG_SCHED]).generate_state(1)[0]),
    )


def flops_model(cfg: ExperimentConfig, agent: Agent) -> FlopsModel:
    return FlopsModel(
        o_bs1=agent.o_bs1,
        n_envs=cfg.n_envs,
        episode_len=cfg.rollout_len,
        batch_size=cfg.minibatch_size,
        n_batches=cfg.ppo.n_minibatches,
        n_episodes=cfg.n_episodes,
    )


@dataclass
class TrainResult:
    agent: Agent
    ledger: FlopsLedger
    scheduler: Scheduler
    records: list[dict]
    final_train_score: float
    total_optimizer_steps: int


def _json_float(x: float) -> float | None:
    return x if math.isfinite(x) else None


def train(
    cfg: ExperimentConfig,
    seed: int,
    log_file: IO[str] | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """One training run: collect, GAE, select K, update, re-collect, commit.

    The rollout gathered right after an update both feeds the scheduler's
    reward signal and serves as the next episode's training batch, so one
    extra rollout precedes episode 0. That warm-up rollout is booked in the
    ledger under episode -1.
    """
    spec = cfg.env
    agent = make_agent(spec, cfg.net.policy_hidden, cfg.net.value_hidden, seed)
    scheduler = build_scheduler(cfg.scheduler, seed)
    venv = VecEnv(spec, cfg.n_envs, np.random.default_rng([seed, _TAG_LEVELS]))
    act_rng = np.random.default_rng([seed, _TAG_ACTIONS])
    normalizer = RewardNormalizer(cfg.n_envs, cfg.ppo.gamma) if cfg.use_reward_norm else None
    ledger = FlopsLedger()
    T = cfg.rollout_len
    tail = max(1, cfg.n_episodes // 10)
    tail_returns: list[float] = []
    records = []
    opt_steps = 0

    obs = venv.reset()
    buf, obs = collect_rollout(agent, venv, obs, T, act_rng, normalizer, ledger, episode=-1)
    for e in range(cfg.n_episodes):
        try:
            compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda)
            k = scheduler.select()
            stats = update_phase(agent, buf, k, cfg, seed, e, ledger)
            opt_steps += stats.optimizer_steps
            buf, obs = collect_rollout(agent, venv, obs, T, act_rng, normalizer, ledger, episode=e)
            v_bar = float(np.mean(buf.values[:-1]))
            finished = buf.finished_returns
            mean_ret = float(np.mean(finished)) if finished else float("nan")
            if cfg.scheduler.signal == "episodic" and finished:
                signal = mean_ret
            else:
                signal = v_bar
            scheduler.commit(k, signal)
        except TrainingDiverged:
            raise
        except Exception as err:
            raise RuntimeError(f"episode {e}: {err}") from err
        if e >= cfg.n_episodes - tail:
            tail_returns.extend(finished)
        rec = {
            "episode": e,
            "env_steps": (e + 2) * T * cfg.n_envs,
            "selected_K": k,
            "mean_episodic_return": _json_float(mean_ret),
            "v_bar": v_bar,
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
            "entropy": stats.entropy,
            "flops_sampling": ledger.sampling_total,
            "flops_update": ledger.update_total,
        }
        records.append(rec)
        if log_file is not None:
            log_file.write(json.dumps(rec) + "\n")
        if e % 50 == 0:
            log.debug("episode %d K=%d return=%s v_bar=%.4f", e, k, rec["mean_episodic_return"], v_bar)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, agent)
    final = float(np.mean(tail_returns)) if tail_returns else float("nan")
    return TrainResult(agent, ledger, scheduler, records, final, opt_steps)


def evaluate(agent: Agent, spec: EnvSpec, n_episodes: int, seed: int, partition: str = "test") -> list[float]:
    """Greedy returns of one episode on each of ``n_episodes`` sampled levels."""
    venv = VecEnv(spec, n_episodes, np.random.default_rng([seed, _TAG_LEVELS, 1]), partition)
    obs = venv.reset()
    returns = np.full(n_episodes, np.nan)
    while np.isnan(returns).any():
        out = act(agent, obs, rng=None, deterministic=True)
        obs, _, _, finished = venv.step(out.actions)
        for i, r, _ in finished:
            if np.isnan(returns[i]):
                returns[i] = r
    return returns.tolist()
