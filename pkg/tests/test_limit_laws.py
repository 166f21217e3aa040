import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from voterlab import lattice_rw as lr
from voterlab import limit_laws as ll
from voterlab.rho_profile import constant, gaussian_bump, heat_value, logistic_axis
from voterlab.rng import stream

# Brute-force triple quadrature (s, u_1, radial distance in the other two
# coordinates) of the defining double integral, with the heat flow of the
# logistic profile done by adaptive quadrature.
ZETA_LOGISTIC_05_1 = 0.0038432149209840817


def test_h_scale():
    assert ll.h_scale(3, 16.0) == 8.0
    assert ll.h_scale(5, 16.0) == 4.0
    assert math.isclose(ll.h_scale(4, math.e**2), math.sqrt(2) * math.e)
    assert math.isclose(ll.h_scale(2, math.e), math.e)
    with pytest.raises(ValueError):
        ll.h_scale(1, 10.0)
    with pytest.raises(ValueError):
        ll.h_scale(4, 1.0)


def test_ito_variance_constant_profile_d5():
    # 4 d gamma_d times the integral of theta p_theta(0, 0), times p(1 - p) t
    v = ll.ito_variance(constant(0.5), 1.0, 5)
    assert math.isclose(v, 20 * lr.gamma(5).value * lr.theta_green_integral(5).value * 0.25,
                        rel_tol=1e-14)
    assert abs(v - 20 * 0.8648213901793449 * 0.01934941440382351 * 0.25) < 1e-12


def test_ito_variance_d4_constant():
    v = ll.ito_variance(constant(0.3), 2.0, 4)
    assert math.isclose(v, lr.gamma(4).value / math.pi**2 * 0.21 * 2.0, rel_tol=1e-14)


def test_ito_variance_matches_integrated_coefficient():
    p = logistic_axis(0.2, 0.8)
    direct, _ = integrate.quad(lambda s: ll.A_coeff(p, s, 5) ** 2, 0, 1.5, epsabs=1e-13)
    v = ll.ito_variance(p, 1.5, 5, with_error=True)
    assert abs(v.value - direct) <= v.error + 1e-12
    assert ll.ito_variance(p, 0.0, 5) == 0.0


def test_ito_variance_and_A_validation():
    with pytest.raises(ValueError):
        ll.ito_variance(constant(0.5), 1.0, 3)
    with pytest.raises(ValueError):
        ll.A_coeff(constant(0.5), 1.0, 3)
    assert ll.A_coeff_error(constant(0.5), 1.0, 5) < 1e-6


@given(st.floats(0.05, 3.0), st.floats(0.0, 0.95), st.floats(0.05, 4.0))
@settings(max_examples=40, deadline=None)
def test_b_kernel_closed_form_matches_quadrature(t, frac, r):
    s = frac * t
    u = [r, 0.0, 0.0]
    assert abs(ll.b_kernel(t, s, u) - ll.b_kernel_quad(t, s, u)) < 1e-8


def test_b_kernel_edge_cases():
    assert ll.b_kernel(1.0, 0.2, [0, 0, 0]) == math.inf
    assert ll.b_kernel(1.0, 1.0, [1, 0, 0]) == 0.0
    with pytest.raises(ValueError):
        ll.b_kernel(1.0, 2.0, [1, 0, 0])
    # rotation invariance and decay
    assert math.isclose(ll.b_kernel(1.0, 0.0, [0.3, 0.4, 0]), ll.b_kernel(1.0, 0.0, [0, 0, 0.5]))
    assert ll.b_kernel(1.0, 0.0, [1, 0, 0]) > ll.b_kernel(1.0, 0.0, [2, 0, 0])


@pytest.mark.parametrize("t", [0.25, 1.0, 3.0])
def test_zeta_variance_closed_form(t):
    z = ll.zeta_cov(constant(0.5), t, t, with_error=True)
    closed = ll.zeta_closed_form_var(0.5, t)
    assert abs(z.value / closed - 1) < 1e-6
    assert z.error < 1e-6 * closed


def test_zeta_cov_constant_against_brute_force():
    # Cov = p(1-p) * int_0^{t1} ds int du b_{t1}(s, u) b_{t2}(s, u), radially
    t1, t2 = 0.5, 1.0

    def inner(s):
        f = lambda r: 4 * math.pi * r * r * ll.b_kernel(t1, s, [r, 0, 0]) * ll.b_kernel(t2, s, [r, 0, 0])
        return integrate.quad(f, 0, 30, epsabs=1e-14, limit=200, points=[0.1, 1, 3])[0]

    direct = 0.25 * integrate.quad(inner, 0, t1, epsabs=1e-13, limit=200)[0]
    assert abs(ll.zeta_cov(constant(0.5), t1, t2) - direct) < 1e-9


def test_zeta_cov_logistic_against_brute_force():
    z = ll.zeta_cov(logistic_axis(0.2, 0.8), 0.5, 1.0, with_error=True)
    assert abs(z.value - ZETA_LOGISTIC_05_1) < 1e-8


def test_zeta_cov_gaussian_bump_generic_rule_agrees():
    # the bump is radial: the shell average equals the point value, so the
    # generic angular rule must reproduce it
    p = gaussian_bump(0.2, 0.5, 1.0)
    r = np.array([0.3, 1.0, 2.5])
    radial = ll._shell_average(p, 0.4, r, 16)
    h = heat_value(p, 0.4, np.stack([r, 0 * r, 0 * r], -1))
    assert np.allclose(radial, h * (1 - h), atol=1e-14)


def test_zeta_cov_symmetry_and_zero():
    p = logistic_axis(0.2, 0.8)
    assert ll.zeta_cov(p, 0.3, 0.8) == ll.zeta_cov(p, 0.8, 0.3)
    assert ll.zeta_cov(p, 0.0, 0.8) == 0.0
    with pytest.raises(ValueError):
        ll.zeta_cov(p, -1.0, 1.0)


def test_zeta_cov_increasing_in_time_and_bounded_by_closed_form():
    p = gaussian_bump(0.2, 0.5, 1.0)
    v = [ll.zeta_cov(p, t, t) for t in (0.25, 0.5, 1.0)]
    assert v[0] < v[1] < v[2]
    # heat(1 - heat) <= 1/4
    assert v[2] < ll.zeta_closed_form_var(0.5, 1.0)


@pytest.mark.parametrize("p", [constant(0.5), logistic_axis(0.2, 0.8), gaussian_bump(0.2, 0.5, 1.0)])
def test_zeta_cov_matrix_is_psd(p):
    cov, err = ll.zeta_cov_matrix(p, np.linspace(1 / 6, 1, 6))
    assert np.allclose(cov, cov.T) and np.all(err >= 0)
    assert ll.is_psd(cov)
    assert np.linalg.eigvalsh(cov).min() > 0


def test_factor_rejects_indefinite():
    assert not ll.is_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ll.NotPositiveSemidefinite):
        ll._factor(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_sample_zeta_path_covariance():
    p = constant(0.5)
    grid = [0.0, 0.5, 1.0]
    paths = ll.sample_zeta_path(p, grid, stream(1, "limit_laws", "test"), 40_000)
    assert np.all(paths[:, 0] == 0.0)
    target = 12 * lr.gamma(3).value * ll.zeta_cov_matrix(p, grid[1:])[0]
    emp = np.cov(paths[:, 1:].T)
    assert np.allclose(emp, target, rtol=0.05)
    raw = ll.sample_zeta_path(p, grid, stream(1, "limit_laws", "test"), 10, scaled=False)
    assert np.allclose(raw * math.sqrt(12 * lr.gamma(3).value), paths[:10])
    with pytest.raises(ValueError):
        ll.sample_zeta_path(p, [0.5, 1.0], stream(1, "limit_laws", "test"))


def test_sample_ito_path_has_independent_increments():
    p = logistic_axis(0.2, 0.8)
    grid = [0.0, 0.5, 1.0]
    paths = ll.sample_ito_path(p, 5, grid, stream(2, "limit_laws", "test"), 40_000)
    var = [ll.ito_variance(p, t, 5) for t in grid]
    assert np.allclose(paths.var(axis=0)[1:], var[1:], rtol=0.05)
    inc = np.diff(paths, axis=1)
    assert abs(np.corrcoef(inc.T)[0, 1]) < 0.02


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.sampled_from([4.0, 100.0, 1e4]))
def test_lattice_round_is_nearest_site(u, N):
    x = ll.lattice_round(u, N)
    gap = np.asarray(u) - x / math.sqrt(N)
    h = 0.5 / math.sqrt(N)
    assert np.all(gap > -h - 1e-12) and np.all(gap <= h + 1e-12)


def test_b_lattice_converges_pointwise():
    t, s, u = 1.0, 0.25, [0.7, 0.0, 0.0]
    # compared at the rounded point the error falls like 1 / N
    errs = []
    for N in (1e2, 1e3, 1e4, 1e5):
        x = ll.lattice_round(u, N) / math.sqrt(N)
        errs.append(abs(ll.b_lattice(t, s, u, N) - ll.b_kernel(t, s, x)))
    assert all(8 < a / b < 12 for a, b in zip(errs, errs[1:]))
    exact = ll.b_kernel(t, s, u)
    assert abs(ll.b_lattice(t, s, u, 1e4) - exact) < 1e-3 * exact
    assert ll.b_lattice(t, t, u, 100.0) == 0.0


def test_b_l2_distance_decreases():
    d = [ll.b_l2_distance(1.0, N, with_error=True) for N in (30.0, 300.0)]
    assert d[1].value + d[1].error < d[0].value - d[0].error
    with pytest.raises(ValueError):
        ll.b_l2_distance(0.0, 10.0)


def test_limit_table_roundtrip(tmp_path):
    p = logistic_axis(0.2, 0.8)
    t3 = ll.limit_table(p, 3, [0.0, 0.5, 1.0])
    assert t3.zeta_cov is not None and t3.values[0]["rho0"]["value"] == 0.5
    back = ll.LimitLawTable.read(t3.write(tmp_path / "t.json"))
    assert back.table_id == t3.table_id
    t5 = ll.limit_table(p, 5, [0.0, 1.0])
    assert t5.zeta_cov is None
    assert {"A", "ito_var"} <= set(t5.values[1])
    assert all("error_bound" in e for e in t5.values[1].values() if isinstance(e, dict))
    with pytest.raises(ValueError):
        ll.limit_table(p, 3, [1.0, 0.5])
