import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voterlab import stats_harness as sh
from voterlab.rho_profile import constant, gaussian_bump
from voterlab.rng import stream


def small_config(tmp_path, **kw):
    base = dict(d=3, N_list=[10, 20, 40], T=1.0, time_grid=[0.0, 1.0], profile=constant(0.5),
                engine="dual", replicas=2, samples=4000, seed=3, output_dir=str(tmp_path))
    base.update(kw)
    return sh.ExperimentConfig(**base)


# ---------------------------------------------------------------- config

def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        small_config(tmp_path, N_list=[])
    with pytest.raises(ValueError):
        small_config(tmp_path, N_list=[100, 10])
    with pytest.raises(ValueError):
        small_config(tmp_path, time_grid=[0.0, 2.0])
    with pytest.raises(ValueError):
        small_config(tmp_path, replicas=1)
    with pytest.raises(ValueError):
        small_config(tmp_path, engine="gpu")
    with pytest.raises(ValueError):
        small_config(tmp_path, checks=["nonsense"])
    with pytest.raises(ValueError):
        small_config(tmp_path, d=2, checks=["occupation"])


def test_config_json_roundtrip_and_hash(tmp_path):
    cfg = small_config(tmp_path, profile=gaussian_bump(0.2, 0.5, 1.0), params={"s": 1.0})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = sh.ExperimentConfig.from_json(path)
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert len(cfg.config_hash()) == 16
    # output_dir does not enter the hash; the seed does
    assert small_config(tmp_path / "x").config_hash() == small_config(tmp_path).config_hash()
    assert small_config(tmp_path, seed=4).config_hash() != small_config(tmp_path).config_hash()
    with pytest.raises(ValueError):
        sh.ExperimentConfig.from_dict({"d": 3, "colour": "red"})


def test_default_checks_follow_engine(tmp_path):
    assert small_config(tmp_path).active_checks == ["occupation_grid"]
    assert small_config(tmp_path, engine="both").active_checks == ["cross_engine"]


# ---------------------------------------------------------------- KS test

def test_ks_self_calibration():
    rng = stream(0, "stats_harness", "ks_calibration")
    rejections = sum(sh.ks_gaussian_test(rng.normal(0, 2.0, 10_000), 4.0)[1] < 0.01
                     for _ in range(500))
    # binomial(500, 0.01): mean 5, 4 sd above is ~14
    assert rejections <= 14


def test_ks_power_against_wrong_variance():
    rng = stream(1, "stats_harness", "ks_power")
    rejections = sum(sh.ks_gaussian_test(rng.normal(0, 1.0, 10_000), 4.0)[1] < 0.01
                     for _ in range(200))
    assert rejections / 200 > 0.99


def test_ks_degenerate_and_invalid():
    stat, p = sh.ks_gaussian_test(np.zeros(100), 1.0)
    assert abs(stat - 0.5) < 1e-12 and p < 1e-10
    with pytest.raises(ValueError):
        sh.ks_gaussian_test(np.zeros(49), 1.0)
    with pytest.raises(ValueError):
        sh.ks_gaussian_test(np.ones(100), 0.0)
    with pytest.raises(ValueError):
        sh.ks_gaussian_test(np.r_[np.ones(99), np.nan], 1.0)


# ---------------------------------------------------------------- trend check

def test_trend_examples():
    ok = sh.trend_check([(1, 0.10, 0), (2, 0.04, 0), (3, 0.01, 0)], 0.0, 0.02)
    assert ok.passed
    bad = sh.trend_check([(1, 0.10, 0), (2, 0.12, 0), (3, 0.15, 0)], 0.0, 0.02)
    assert not bad.passed
    with pytest.raises(ValueError):
        sh.trend_check([(1, 0.1, 0), (2, 0.0, 0)], 0.0, 0.1)
    with pytest.raises(ValueError):
        sh.trend_check([(2, 0.1, 0), (1, 0.0, 0), (3, 0.0, 0)], 0.0, 0.1)


def test_trend_final_tolerance():
    vals = [(1, 0.30, 0.001), (2, 0.2, 0.001), (3, 0.1, 0.001)]
    assert not sh.trend_check(vals, 0.0, 0.05).passed
    assert sh.trend_check(vals, 0.0, 0.05, target_error=0.05).passed


@given(st.floats(-5, 5), st.floats(0.1, 3.0), st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_trend_synthetic_sequences_pass(target, c, seed):
    # estimates target + c / sqrt(N) plus noise of the reported size
    rng = np.random.default_rng(seed)
    Ns = [1e2, 1e3, 1e4, 1e5]
    se = [0.05 * c / math.sqrt(N) for N in Ns]
    vals = [(N, target + c / math.sqrt(N) + rng.normal(0, s), s) for N, s in zip(Ns, se)]
    assert sh.trend_check(vals, target, tol=1.2 * c / math.sqrt(Ns[-1])).passed


def test_trend_per_point_targets():
    vals = [(1, 1.0, 0.0), (2, 2.0, 0.0), (3, 3.0, 0.0)]
    assert sh.trend_check(vals, [1.0, 2.0, 3.0], 0.0).passed
    with pytest.raises(ValueError):
        sh.trend_check(vals, [1.0, 2.0], 0.0)


# ---------------------------------------------------------------- records

def test_check_record_requires_provenance():
    with pytest.raises(ValueError):
        sh.CheckRecord("x", True, {"value": 1.0}, sh._estimate(1.0, 0.0, "op", 1))
    with pytest.raises(ValueError):
        sh.CheckRecord("x", True, sh._target(1.0, 0.0, "p"), {"value": 1.0})
    r = sh.CheckRecord("x", False, sh._target(1.0, 0.0, "p"), sh._estimate(2.0, 0.1, "op", 5))
    assert r.status == "fail" and r.line().startswith("FAIL")


# ---------------------------------------------------------------- runner

def test_zero_time_grid_report(tmp_path):
    cfg = small_config(tmp_path, time_grid=[0.0])
    rep = sh.run_experiment(cfg)
    assert rep.passed and [r.name for r in rep.records] == ["occupation_cov[t=0]"]
    out = tmp_path / cfg.config_hash()
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and report["provenance"]["config_hash"] == cfg.config_hash()
    assert report["provenance"]["limit_table_id"]
    assert (out / "limit_table.json").exists() and (out / "estimates.csv").exists()


def test_reports_are_reproducible(tmp_path):
    cfg_a = small_config(tmp_path / "a", checks=["occupation"], params={"t1": 0.5, "t2": 1.0})
    cfg_b = small_config(tmp_path / "b", checks=["occupation"], params={"t1": 0.5, "t2": 1.0})
    sh.run_experiment(cfg_a)
    sh.run_experiment(cfg_b, threads=2)
    h = cfg_a.config_hash()
    for name in ("estimates.csv", "report.json", "limit_table.json"):
        assert (tmp_path / "a" / h / name).read_bytes() == (tmp_path / "b" / h / name).read_bytes()


def test_every_record_has_both_provenances(tmp_path):
    cfg = small_config(tmp_path, checks=["pair_limit", "occupation"], params={"s": 0.5})
    rep = sh.run_experiment(cfg, write=False)
    for r in rep.records:
        assert r.target["provenance"] and r.estimate["op"] and r.estimate["samples"] is not None
        assert r.status.endswith("pass") or r.status.endswith("fail")


def test_resource_budget_refusal(tmp_path):
    cfg = small_config(tmp_path, engine="forward", N_list=[25], replicas=300, event_budget=1e6)
    with pytest.raises(sh.ResourceBudgetExceeded, match="events"):
        sh.run_experiment(cfg)


def test_forward_grid_and_event_prediction(tmp_path):
    cfg = small_config(tmp_path, engine="forward", N_list=[4], time_grid=[0.0, 0.5, 1.0],
                       profile=gaussian_bump(0.2, 0.5, 1.0), replicas=30)
    rep = sh.run_experiment(cfg)
    assert len(rep.records) == 3
    assert rep.passed
    pred, actual = rep.resources["predicted_events"], rep.resources["actual_events"]
    assert 0.5 < actual / pred < 2.0
    rows = (tmp_path / cfg.config_hash() / "paths.csv").read_text().splitlines()
    assert rows[0] == "replica,seed,t,xi_scaled" and len(rows) == 1 + 30 * 3


def test_acceptance_configs_cover_all_criteria():
    cfgs = sh.acceptance_configs()
    assert sorted(cfgs) == [str(i) for i in range(1, 9)]
    assert cfgs["5"].replicas >= 300 and cfgs["6"].replicas >= 300
    assert cfgs["4"].params["t1"] == 0.5 and cfgs["3"].d == 5
    assert all(sh.predicted_events(c) <= c.event_budget for c in cfgs.values())
