"""Experiment configuration: strict JSON schema with desk-scale defaults."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .envs import EnvSpec

SchedulerName = Literal["fixed", "rrs", "ucb", "gts"]
Transform = Literal["identity", "horizontal_flip", "random_translate", "uniform_noise"]


class ConfigError(ValueError):
    """Raised for unreadable or schema-violating config files."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SchedulerConfig(_Strict):
    name: SchedulerName = "fixed"
    nue: list[int] = Field(default_factory=lambda: [3, 2, 1])
    fixed_k: int = Field(3, ge=1)
    c: float = Field(5.0, ge=0)
    window: int = Field(10, ge=1)
    eta: float = Field(1.0, ge=0)
    prior_mean: float = 0.0
    prior_var: float = Field(1.0, ge=0)
    var_floor: float = Field(1e-6, ge=0)
    # "value": mean value prediction over the fresh rollout;
    # "episodic": mean realized return of episodes finished in it.
    signal: Literal["value", "episodic"] = "value"

    @model_validator(mode="after")
    def _check_nue(self):
        if not self.nue or any(k < 1 for k in self.nue) or len(set(self.nue)) != len(self.nue):
            raise ValueError("nue must be a nonempty list of distinct integers >= 1")
        return self

    @property
    def arms(self) -> tuple[int, ...]:
        return (self.fixed_k,) if self.name == "fixed" else tuple(self.nue)


class PpoConfig(_Strict):
    gamma: float = Field(0.99, ge=0, lt=1)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    clip_eps: float = Field(0.2, gt=0)
    value_coef: float = Field(0.5, ge=0)
    entropy_coef: float = Field(0.01, ge=0)
    value_clip: float | None = Field(0.2, ge=0)
    max_grad_norm: float = Field(0.5, gt=0)
    n_minibatches: int = Field(16, ge=1)
    adv_normalize: bool = True
    # None: on for plain PPO, off for DrAC.
    reward_norm: bool | None = None


class DracConfig(_Strict):
    reg_coef: float = Field(0.1, ge=0)
    transform: Transform = "random_translate"


class AdamSettings(_Strict):
    learning_rate: float = Field(2e-3, ge=0)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    epsilon: float = Field(1e-5, gt=0)


class NetConfig(_Strict):
    policy_hidden: list[int] = Field(default_factory=lambda: [64, 64])
    value_hidden: list[int] = Field(default_factory=lambda: [64, 64])


class ExperimentConfig(_Strict):
    name: str = "run"
    env: EnvSpec = Field(default_factory=EnvSpec)
    algorithm: Literal["ppo", "ppo_drac"] = "ppo"
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    ppo: PpoConfig = Field(default_factory=PpoConfig)
    drac: DracConfig = Field(default_factory=DracConfig)
    adam: AdamSettings = Field(default_factory=AdamSettings)
    net: NetConfig = Field(default_factory=NetConfig)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    n_episodes: int = Field(500, ge=1)
    eval_episodes: int = Field(100, ge=1)
    n_envs: int = Field(64, ge=1)
    rollout_len: int = Field(64, ge=1)
    output_dir: str = "runs/default"
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        batch = self.n_envs * self.rollout_len
        if batch % self.ppo.n_minibatches:
            raise ValueError(
                f"n_envs * rollout_len = {batch} is not divisible by n_minibatches = {self.ppo.n_minibatches}"
            )
        if self.algorithm == "ppo_drac":
            if not self.env.discrete:
                raise ValueError("ppo_drac needs a discrete action space")
            if not self.env.is_grid and self.drac.transform in ("horizontal_flip", "random_translate"):
                raise ValueError(f"transform {self.drac.transform} needs a grid observation")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        return self

    @property
    def minibatch_size(self) -> int:
        return self.n_envs * self.rollout_len // self.ppo.n_minibatches

    @property
    def use_reward_norm(self) -> bool:
        if self.ppo.reward_norm is None:
            return self.algorithm == "ppo"
        return self.ppo.reward_norm

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _first_error(err: ValidationError) -> ConfigError:
    e = err.errors()[0]
    key = ".".join(str(p) for p in e["loc"])
    if e["type"] == "extra_forbidden":
        return ConfigError(f"unknown config key {key!r}", key)
    where = f" at {key!r}" if key else ""
    return ConfigError(f"invalid config{where}: {e['msg']}", key or None)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise _first_error(err) from None


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)
