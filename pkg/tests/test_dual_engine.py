import math

import numpy as np
import pytest

from voterlab import _walks
from voterlab import dual_engine as de
from voterlab import lattice_rw as lr
from voterlab.limit_laws import h_scale
from voterlab.rho_profile import constant, gaussian_bump, logistic_axis
from voterlab.rng import stream


def within(est, target, k=4.0, extra=0.0):
    return abs(est.value - target) <= k * est.std_error + extra


def test_simulate_pair_basic(rng):
    r = de.simulate_coalescing_pair((0, 0, 0), (0, 0, 0), 3.0, rng)
    assert r.coalesced and r.tau == 0.0 and r.end_primary == r.end_secondary
    r = de.simulate_coalescing_pair((0, 0, 0), (40, 0, 0), 0.5, rng)
    assert not r.coalesced and r.tau is None
    with pytest.raises(ValueError):
        de.simulate_coalescing_pair((0, 0, 0), (1, 0, 0), -1.0, rng)


def test_meeting_time_laplace_transform():
    # The difference of the pair is a rate-4d walk, i.e. the rate-2d walk at
    # double speed, so E exp(-lam tau) = g_N(e1) / g_N(0) with N = 2 / lam.
    lam, n = 0.1, 60_000
    rng = stream(1, "dual_engine", "test_laplace")
    x = np.zeros((n, 3), np.int64)
    y = x.copy()
    y[:, 0] = 1
    c, tau, *_ = _walks.coalescing_pairs(rng, x, y, np.full(n, 400.0), False)
    vals = np.where(c, np.exp(-lam * tau), 0.0)
    N = 2 / lam
    target = lr.g_N((1, 0, 0), N).value / lr.g_N((0, 0, 0), N).value
    assert abs(vals.mean() - target) < 4 * vals.std() / math.sqrt(n)


def test_coalesced_walks_share_endpoints_and_free_copy_moves_on(rng):
    n = 20_000
    x = np.zeros((n, 3), np.int64)
    y = np.tile([1, 0, 0], (n, 1))
    c, tau, ep, es, ef = _walks.coalescing_pairs(rng, x, y, np.full(n, 50.0), True)
    assert np.array_equal(ep[c], es[c])
    assert np.array_equal(es[~c], ef[~c])
    # the free copy is a walk from (1,0,0) run for 50: per-coordinate variance 100
    v = (ef - y).var(axis=0)
    assert np.all(np.abs(v - 100.0) < 5.0)
    # so is the primary walk, coalesced or not
    assert np.all(np.abs(ep.var(axis=0) - 100.0) < 5.0)


def test_estimates_do_not_depend_on_threads():
    p = logistic_axis(0.2, 0.8)
    a = de.pair_sq_diff(p, (0, 0, 0), (1, 0, 0), 0.5, 100.0, 10_000, seed=4, threads=1)
    b = de.pair_sq_diff(p, (0, 0, 0), (1, 0, 0), 0.5, 100.0, 10_000, seed=4, threads=3)
    assert a == b


def test_moment_merge_matches_direct(rng):
    v = rng.normal(size=1000)
    m = de._Moments.of(v[:300]).merge(de._Moments.of(v[300:]))
    assert math.isclose(m.mean, v.mean(), rel_tol=1e-12)
    assert math.isclose(m.m2, ((v - v.mean()) ** 2).sum(), rel_tol=1e-10)


def test_pair_sq_diff_constant_profile_factorises():
    # for constant p the functional is 2p(1-p) 1{no meeting}
    p, s, N, n = 0.3, 0.2, 50.0, 40_000
    est = de.pair_sq_diff(constant(p), (0, 0, 0), (1, 0, 0), s, N, n, seed=2)
    rng = stream(2, "dual_engine", "independent")
    m = np.zeros((n, 3), np.int64)
    e = np.tile([1, 0, 0], (n, 1))
    c, *_ = _walks.coalescing_pairs(rng, m, e, np.full(n, s * N), False)
    target = 2 * p * (1 - p) * (1 - c.mean())
    assert within(est, target, extra=4 * 2 * p * (1 - p) * c.std() / math.sqrt(n))


def test_pair_sq_diff_tends_to_twice_gamma_at_large_times():
    # with ever more time the pair survives with probability gamma_3
    est = de.pair_sq_diff(constant(0.5), (0, 0, 0), (1, 0, 0), 1.0, 3000.0, 40_000, seed=1)
    target = 2 * lr.gamma(3).value * 0.25
    late = lr.late_hit_bound(3, 2 * 3000.0)
    assert within(est, target, extra=0.5 * late)


def test_pair_sq_diff_validation():
    with pytest.raises(ValueError):
        de.pair_sq_diff(constant(0.5), (0, 0, 0), (0, 0, 0), 1.0, 10.0, 100)
    with pytest.raises(ValueError):
        de.pair_sq_diff(constant(0.5), (0, 0, 0), (1, 0, 0), 0.0, 10.0, 100)
    with pytest.raises(ValueError):
        de.pair_sq_diff(constant(0.5), (0, 0, 0), (1, 0, 0), 1.0, 10.0, 1)


def test_pair_cov_bounded_by_hit_probability():
    for y in [(1, 0, 0), (2, 1, 0)]:
        est = de.pair_cov(gaussian_bump(0.2, 0.5, 1.0), (0, 0, 0), y, 1.0, 25.0, 20_000, seed=3)
        assert est.value <= lr.hit_prob(y) + 3 * est.std_error


def test_pair_cov_same_site_is_bernoulli_variance():
    p = logistic_axis(0.2, 0.8)
    m = de.mean_occupancy(p, 10.0, np.array([2, 0, 0]), 16.0)
    est = de.pair_cov(p, (2, 0, 0), (2, 0, 0), 10.0 / 16.0, 16.0, 40_000, seed=8)
    assert within(est, m * (1 - m))


def test_two_time_cov_coupled_matches_naive():
    p = gaussian_bump(0.2, 0.5, 1.0)
    a = de.two_time_cov(p, 0.3, 0.6, 25.0, 60_000, seed=5, coupled=True)
    b = de.two_time_cov(p, 0.3, 0.6, 25.0, 60_000, seed=6, coupled=False)
    assert abs(a.value - b.value) <= 4 * math.hypot(a.std_error, b.std_error)
    assert a.std_error < b.std_error
    with pytest.raises(ValueError):
        de.two_time_cov(p, 0.6, 0.3, 25.0, 100)


def test_two_time_cov_equal_times_is_variance():
    p = constant(0.4)
    est = de.two_time_cov(p, 0.5, 0.5, 10.0, 1000, seed=1)
    assert est.value == pytest.approx(0.24) and est.std_error < 1e-12


def test_default_kappa():
    assert [de.default_kappa(d) for d in (3, 4, 5, 7)] == [0.25, 0.5, 1.0, 1.0]


def naive_occupation_cov(p, t1, t2, d, N, n, seed):
    """Uniform time pairs; the later-starting walk first runs alone."""
    rng = stream(seed, "dual_engine", "naive_occupation")
    a = rng.uniform(0, t1 * N, n)
    b = rng.uniform(0, t2 * N, n)
    lo, gap = np.minimum(a, b), np.abs(a - b)
    z = np.array([lr.sample_walk(np.zeros(d, np.int64), g, rng).position_at(g) for g in gap])
    c, *_ = _walks.coalescing_pairs(rng, np.zeros((n, d), np.int64), z, lo, False)
    vals = t1 * N * t2 * N * p * (1 - p) * c / h_scale(d, N) ** 2
    return vals.mean(), vals.std() / math.sqrt(n)


@pytest.mark.parametrize("d,t1,t2", [(3, 1.0, 1.0), (3, 0.5, 1.0), (5, 1.0, 1.0)])
def test_occupation_cov_against_uniform_sampling(d, t1, t2):
    N = 20.0
    est = de.occupation_cov(constant(0.5), t1, t2, d, N, 60_000, seed=9)
    m, se = naive_occupation_cov(0.5, t1, t2, d, N, 30_000, seed=10)
    assert abs(est.value - m) <= 4 * math.hypot(est.std_error, se)


def test_occupation_cov_kappa_invariance():
    p = logistic_axis(0.2, 0.8)
    a = de.occupation_cov(p, 0.5, 1.0, 3, 30.0, 40_000, seed=1, kappa=0.0)
    b = de.occupation_cov(p, 0.5, 1.0, 3, 30.0, 40_000, seed=2, kappa=0.7)
    assert abs(a.value - b.value) <= 4 * math.hypot(a.std_error, b.std_error)


def test_occupation_cov_edge_cases():
    assert de.occupation_cov(constant(0.5), 0.0, 1.0, 3, 10.0, 100).value == 0.0
    with pytest.raises(ValueError):
        de.occupation_cov(constant(0.5), 1.0, 0.5, 3, 10.0, 100)


def test_estimate_row_schema():
    est = de.MomentEstimate(0.5, 0.01, 100)
    row = de.estimate_row("pair_sq_diff", 3, 100.0, constant(0.5), {"s": 1.0, "shift": 0}, est, 7)
    assert tuple(row) == de.CSV_FIELDS
    assert row["params"] == "s=1.0;shift=0" and float(row["value"]) == 0.5
    with pytest.raises(ValueError):
        de.MomentEstimate(0.0, -1.0, 10)
