from __future__ import annotations

import csv
import json
from fractions import Fraction

import numpy as np
import pytest

from nuesched import harness
from nuesched.config import config_from_dict
from nuesched.harness import RunRecord, RunSummary

TINY = {
    "n_episodes": 6,
    "n_envs": 4,
    "rollout_len": 16,
    "eval_episodes": 5,
    "net": {"policy_hidden": [16], "value_hidden": [16]},
}


def _cfg(tmp_path, **kw):
    return config_from_dict({**TINY, "output_dir": str(tmp_path), **kw})


def _files(root, seed):
    d = root / f"seed_{seed}"
    return (d / "log.jsonl").read_bytes(), (d / "checkpoint.bin").read_bytes()


def test_suite_writes_one_log_and_summary_per_seed(tmp_path):
    cfg = _cfg(tmp_path, name="rrs", seeds=[0, 1, 2], scheduler={"name": "rrs"})
    out = harness.run_suite(cfg)
    assert [s.seed for s in out] == [0, 1, 2] and all(s.ok for s in out)
    for s in out:
        d = tmp_path / "rrs" / f"seed_{s.seed}"
        lines = (d / "log.jsonl").read_text().splitlines()
        assert len(lines) == cfg.n_episodes
        last = json.loads(lines[-1])
        saved = json.loads((d / "summary.json").read_text())
        assert saved["flops_total"] == last["flops_sampling"] + last["flops_update"]
        assert saved["flops_sampling"] == last["flops_sampling"]
        assert abs(sum(saved["selection_proportions"].values()) - 1.0) <= 1e-9
        assert saved["test_score"] is not None
    assert json.loads((tmp_path / "rrs" / "config.json").read_text())["name"] == "rrs"


def test_suite_is_deterministic_and_seed_isolated(tmp_path):
    a = _cfg(tmp_path / "a", seeds=[0, 1, 2], scheduler={"name": "ucb", "c": 1.0})
    b = _cfg(tmp_path / "b", seeds=[0, 2], scheduler={"name": "ucb", "c": 1.0})
    harness.run_suite(a)
    harness.run_suite(a, tmp_path / "a2")
    harness.run_suite(b)
    for s in (0, 1, 2):
        assert _files(tmp_path / "a" / "run", s) == _files(tmp_path / "a2" / "run", s)
    for s in (0, 2):
        assert _files(tmp_path / "a" / "run", s) == _files(tmp_path / "b" / "run", s)


def test_failed_seed_is_recorded_and_others_continue(tmp_path, monkeypatch):
    real_train = harness.train

    def flaky(cfg, seed, **kw):
        if seed == 1:
            raise RuntimeError("episode 0: boom")
        return real_train(cfg, seed, **kw)

    monkeypatch.setattr(harness, "train", flaky)
    out = harness.run_suite(_cfg(tmp_path, seeds=[0, 1, 2]))
    assert [s.status for s in out] == ["ok", "failed", "ok"]
    assert "boom" in out[1].error
    saved = json.loads((tmp_path / "run" / "seed_1" / "summary.json").read_text())
    assert saved["status"] == "failed"


def test_update_flops_ratio_two_thirds(tmp_path):
    fixed = harness.run_suite(_cfg(tmp_path, name="fixed", seeds=[0]))[0]
    rrs = harness.run_suite(_cfg(tmp_path, name="rrs", seeds=[0], scheduler={"name": "rrs"}))[0]
    assert Fraction(rrs.flops_update, fixed.flops_update) == Fraction(2, 3)
    assert rrs.flops_sampling == fixed.flops_sampling


def test_worker_pool_matches_sequential(tmp_path):
    seq = _cfg(tmp_path / "seq", seeds=[0, 1])
    par = _cfg(tmp_path / "par", seeds=[0, 1], workers=2)
    harness.run_suite(seq)
    harness.run_suite(par)
    for s in (0, 1):
        assert _files(tmp_path / "seq" / "run", s) == _files(tmp_path / "par" / "run", s)


def test_worker_cap_env(monkeypatch):
    monkeypatch.setenv(harness.MAX_WORKERS_ENV, "2")
    assert harness.worker_count(8, 5) == 2
    assert harness.worker_count(1, 5) == 1
    monkeypatch.setenv(harness.MAX_WORKERS_ENV, "many")
    with pytest.raises(ValueError):
        harness.worker_count(4, 4)
    monkeypatch.delenv(harness.MAX_WORKERS_ENV)
    assert harness.worker_count(8, 3) == 3


def test_load_runs_groups_by_method(tmp_path):
    harness.run_suite(_cfg(tmp_path, name="fixed", seeds=[1, 0]))
    harness.run_suite(_cfg(tmp_path, name="rrs", seeds=[0], scheduler={"name": "rrs"}))
    grouped = harness.load_runs([tmp_path])
    assert sorted(grouped) == ["fixed", "rrs"]
    assert [r.seed for r in grouped["fixed"]] == [0, 1]
    with pytest.raises(FileNotFoundError):
        harness.load_runs([tmp_path / "nope"])


# --------------------------------------------------------------- decisions


def _log(ks):
    return [{"selected_K": k} for k in ks]


def test_decision_report_round_robin_uniform():
    rep = harness.decision_report([_log([3, 2, 1] * 100)])
    assert rep.arms == (3, 2, 1)
    assert all(p == pytest.approx(1 / 3, abs=1e-12) for p in rep.final.values())
    assert np.all(np.abs(rep.proportions.sum(axis=1) - 1.0) <= 1e-9)


def test_decision_report_fixed_degenerate():
    rep = harness.decision_report([_log([3] * 50)], arms=(3, 2, 1))
    assert rep.final == {3: 1.0, 2: 0.0, 1: 0.0}


def test_decision_report_pools_logs():
    rep = harness.decision_report([_log([1, 1]), _log([2, 2])])
    assert rep.final == {2: 0.5, 1: 0.5}
    with pytest.raises(ValueError):
        harness.decision_report([])
    with pytest.raises(ValueError):
        harness.decision_report([_log([5])], arms=(1, 2))


# --------------------------------------------------------------- aggregate


def _summary(method, score, seed=0, task="proc_maze"):
    return RunSummary(method=method, task=task, seed=seed, test_score=score, final_train_score=score)


def _rows(report):
    return {(r["method"], r["metric"]): r for r in report.rows}


def test_aggregate_self_comparison():
    sums = [_summary("ppo", s, i) for i, s in enumerate([0.4, 0.5, 0.6, 0.7])]
    rows = _rows(harness.aggregate(sums, "ppo", n_resamples=200))
    for metric in ("mean", "median", "iqm"):
        assert rows[("ppo", metric)]["point"] == pytest.approx(1.0)
    # spread-out runs fall below parity on one side: (1 - 0.4/0.55) + (1 - 0.5/0.55) over 4 runs
    assert rows[("ppo", "og")]["point"] == pytest.approx((2 - 0.9 / 0.55) / 4)


def test_aggregate_baseline_constant_self_is_exact():
    sums = [_summary("ppo", 0.5, i) for i in range(4)]
    rows = _rows(harness.aggregate(sums, "ppo", n_resamples=100))
    for metric in ("mean", "median", "iqm"):
        assert rows[("ppo", metric)]["point"] == 1.0
    assert rows[("ppo", "og")]["point"] == 0.0


def test_aggregate_single_run_degenerate_ci():
    rows = _rows(harness.aggregate([_summary("ppo", 2.0)], "ppo"))
    for metric in ("mean", "median", "iqm", "og"):
        r = rows[("ppo", metric)]
        assert r["low"] == r["point"] == r["high"]


def test_aggregate_matches_metric_oracles():
    sums = [_summary("ppo", 1.0)]
    sums += [_summary("m", float(v), i) for i, v in enumerate(range(1, 9))]
    sums += [_summary("og", v, i) for i, v in enumerate([0.5, 1.5])]
    rows = _rows(harness.aggregate(sums, "ppo", n_resamples=100))
    assert rows[("m", "iqm")]["point"] == 4.5
    assert rows[("og", "og")]["point"] == 0.25


def test_aggregate_missing_baseline():
    with pytest.raises(ValueError):
        harness.aggregate([_summary("m", 1.0)], "ppo")


def test_aggregate_outputs(tmp_path):
    sums = [_summary("ppo", 0.5, i) for i in range(3)] + [_summary("ucb", 0.6, i) for i in range(3)]
    rep = harness.aggregate(sums, "ppo", n_resamples=50)
    text, table = rep.to_text(), rep.to_csv()
    assert "ucb" in text and "iqm" in text
    rows = list(csv.DictReader(table.splitlines()))
    assert len(rows) == 8 and rows[0]["method"] == "ppo"


# ------------------------------------------------------------------- plots


def _fake_runs(values):
    runs = []
    for seed, series in enumerate(values):
        recs = [
            {"episode": e, "env_steps": 64 * (e + 2), "selected_K": 3, "mean_episodic_return": v,
             "flops_sampling": 10 * (e + 1), "flops_update": 20 * (e + 1)}
            for e, v in enumerate(series)
        ]
        runs.append(RunRecord("ppo", seed, None, recs, None))
    return runs


def test_plots_empty_is_noop(tmp_path):
    assert harness.emit_plots({}, tmp_path / "out") == []
    assert not (tmp_path / "out").exists()


def test_plot_std_band_hand_computed(tmp_path):
    values = [[1.0, 2.0, 0.0, 5.0], [3.0, 2.0, None, 1.0], [2.0, 5.0, 3.0, 0.0]]
    written = harness.emit_plots({"ppo": _fake_runs(values)}, tmp_path)
    assert {p.name for p in written} == {
        "returns.csv", "returns.svg", "flops.csv", "flops.svg", "decisions.csv", "decisions.svg"
    }
    rows = list(csv.DictReader(open(tmp_path / "returns.csv")))
    assert len(rows) == 4
    # population std by hand: episode 0 -> values 1, 3, 2
    assert float(rows[0]["ppo_mean"]) == pytest.approx(2.0)
    assert float(rows[0]["ppo_std"]) == pytest.approx(np.sqrt(2 / 3))
    # episode 1 -> 2, 2, 5: mean 3, deviations -1, -1, 2
    assert float(rows[1]["ppo_std"]) == pytest.approx(np.sqrt(6 / 3))
    # episode 2 has a missing value: 0 and 3 only
    assert float(rows[2]["ppo_mean"]) == pytest.approx(1.5)
    assert float(rows[2]["ppo_std"]) == pytest.approx(1.5)
    assert (tmp_path / "returns.svg").read_text().lstrip().startswith("<?xml")
