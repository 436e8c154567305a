from __future__ import annotations

import json

import pytest

from nuesched.config import ConfigError, ExperimentConfig, config_from_dict, parse_config


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return p


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, {}))
    assert cfg.ppo.gamma == 0.99
    assert cfg.ppo.gae_lambda == 0.95
    assert cfg.ppo.clip_eps == 0.2
    assert cfg.ppo.value_clip == 0.2
    assert cfg.ppo.max_grad_norm == 0.5
    assert cfg.adam.learning_rate > 0
    assert cfg.env.kind == "proc_maze" and cfg.env.n_levels == 200
    assert cfg.scheduler.nue == [3, 2, 1]
    assert cfg.seeds == [0, 1, 2, 3, 4]


def test_unknown_key_names_offender(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(_write(tmp_path, {"adam": {"leraning_rate": 1e-3}}))
    assert "leraning_rate" in str(exc.value)
    assert exc.value.key == "adam.leraning_rate"
    with pytest.raises(ConfigError) as exc:
        parse_config(_write(tmp_path, {"leraning_rate": 1e-3}))
    assert exc.value.key == "leraning_rate"


def test_round_trip(tmp_path):
    cfg = config_from_dict({"name": "x", "scheduler": {"name": "ucb", "c": 2.0}, "env": {"kind": "key_door"}})
    again = parse_config(_write(tmp_path, cfg.to_json()))
    assert again == cfg
    assert again.to_json() == cfg.to_json()


@pytest.mark.parametrize(
    "data,key",
    [
        ({"n_episodes": 0}, "n_episodes"),
        ({"scheduler": {"nue": [2, 2]}}, "scheduler"),
        ({"scheduler": {"name": "eps"}}, "scheduler.name"),
        ({"ppo": {"gamma": 1.0}}, "ppo.gamma"),
        ({"algorithm": "a2c"}, "algorithm"),
    ],
)
def test_schema_violations(data, key):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert exc.value.key == key


def test_cross_field_checks():
    with pytest.raises(ConfigError):
        config_from_dict({"n_envs": 3, "rollout_len": 5})
    with pytest.raises(ConfigError):
        config_from_dict({"env": {"kind": "point_mass"}, "algorithm": "ppo_drac"})
    with pytest.raises(ConfigError):
        config_from_dict({"seeds": []})


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        parse_config(_write(tmp_path, "{not json"))
    with pytest.raises(ConfigError):
        parse_config(_write(tmp_path, "[1, 2]"))


def test_reward_norm_auto():
    assert config_from_dict({}).use_reward_norm
    assert not config_from_dict({"algorithm": "ppo_drac"}).use_reward_norm
    assert config_from_dict({"algorithm": "ppo_drac", "ppo": {"reward_norm": True}}).use_reward_norm


def test_minibatch_size():
    cfg = ExperimentConfig(n_envs=4, rollout_len=32)
    assert cfg.minibatch_size == 4 * 32 // cfg.ppo.n_minibatches
    assert config_from_dict({"ppo": {"n_minibatches": 4}, "n_envs": 4, "rollout_len": 32}).minibatch_size == 32
