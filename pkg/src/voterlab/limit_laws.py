"""Limit objects of the occupation-time central limit theorems.

d >= 4: the scaled occupation time converges to the Ito integral of
A_{s,d} against Brownian motion.  d = 3: it converges to sqrt(12 gamma_3)
times a Gaussian process zeta whose covariance is a double integral of the
kernel b_t(s, u) against heat(s, u)(1 - heat(s, u)).
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .lattice_rw import Approx, _panel_integral, _coordinate_products, gamma, theta_green_integral
from .rho_profile import RhoProfile, heat_value


def h_scale(d: int, t: float) -> float:
    """Normalisation of the occupation time at time t in dimension d."""
    if d < 2:
        raise ValueError("scaling is defined for d >= 2")
    if d in (2, 4) and not t > 1:
        raise ValueError(f"h_scale({d}, t) needs log t > 0")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if d == 2:
        return t / math.sqrt(math.log(t))
    if d == 3:
        return t ** 0.75
    if d == 4:
        return math.sqrt(t * math.log(t))
    return math.sqrt(t)


# ---------------------------------------------------------------- d >= 4

def _a_const(d: int) -> Approx:
    """Factor c with A^2 = c * heat (1 - heat)."""
    g = gamma(d)
    if d == 4:
        return Approx(g.value / math.pi**2, g.error / math.pi**2)
    th = theta_green_integral(d)
    c = 4 * d * g.value * th.value
    return Approx(c, c * (g.error / g.value + th.error / th.value))


def _variance_density(profile: RhoProfile, s: float, d: int) -> float:
    r = heat_value(profile, s, np.zeros(d))
    return r * (1 - r)


def A_coeff(profile: RhoProfile, s: float, d: int) -> float:
    """Diffusion coefficient A_{s,d} of the limiting Ito integral."""
    if d <= 3:
        raise ValueError("A_{s,d} is defined for d >= 4")
    if s < 0:
        raise ValueError("s must be nonnegative")
    return math.sqrt(_a_const(d).value * _variance_density(profile, s, d))


def A_coeff_error(profile: RhoProfile, s: float, d: int) -> float:
    c = _a_const(d)
    v = _variance_density(profile, s, d)
    a = math.sqrt(c.value * v)
    # relative error of A is half that of A^2; heat carries at most 1e-8
    rel = 0.5 * (c.error / c.value + 1e-8 / max(v, 1e-300))
    return a * rel


def ito_variance(profile: RhoProfile, t: float, d: int, *, with_error: bool = False):
    """Variance of the limit at t: integral over [0, t] of A_{s,d}^2."""
    if d <= 3:
        raise ValueError("the Ito limit is defined for d >= 4")
    if t < 0:
        raise ValueError("t must be nonnegative")
    c = _a_const(d)
    if t == 0:
        out = Approx(0.0, 0.0)
    elif profile.is_constant:
        p = profile.params[0]
        val = c.value * p * (1 - p) * t
        out = Approx(val, c.error * p * (1 - p) * t)
    else:
        val, err = integrate.quad(lambda s: _variance_density(profile, s, d), 0.0, t,
                                  epsabs=1e-12, epsrel=1e-10, limit=200)
        out = Approx(c.value * val, c.value * (err + 1e-8 * t) + c.error * val)
    return out if with_error else out.value


# ---------------------------------------------------------------- d = 3 kernel

def b_kernel(t: float, s: float, u):
    """b_t(s, u) = erfc(|u| / (2 sqrt(t - s))) / (4 pi |u|); +inf at u = 0."""
    if s > t:
        raise ValueError("b_kernel needs s <= t")
    if s < 0:
        raise ValueError("s must be nonnegative")
    r = np.linalg.norm(np.asarray(u, dtype=float), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        if t == s:
            out = np.where(r > 0, 0.0, np.inf)
        else:
            out = np.where(r > 0, special.erfc(r / (2 * math.sqrt(t - s))) / (4 * math.pi * r),
                           np.inf)
    return float(out) if np.ndim(out) == 0 else out


def b_kernel_quad(t: float, s: float, u) -> float:
    """The defining integral of b over r in [0, t - s], by adaptive quadrature."""
    r2 = float(np.sum(np.asarray(u, dtype=float) ** 2))
    f = lambda r: (4 * math.pi * r) ** -1.5 * math.exp(-r2 / (4 * r)) if r > 0 else 0.0
    # the integrand is negligible below r2 / 2000 and peaks near r2 / 6
    pts = [p for p in (r2 / 6, r2) if 0 < p < t - s]
    val, _ = integrate.quad(f, 0.0, t - s, points=pts or None, epsabs=1e-14, epsrel=1e-12,
                            limit=500)
    return val


def zeta_closed_form_var(p: float, t: float) -> float:
    """Var(zeta_t) for a constant profile p."""
    return p * (1 - p) * (4 * math.pi) ** -1.5 * (8 - 4 * math.sqrt(2)) * (2 / 3) * t**1.5


@lru_cache(maxsize=None)
def _gl01(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1), 0.5 * w


def _radial_nodes(order: int):
    # rho in [0, 6.5] split at 1 and 3; erfc(6.5)^2 < 1e-38
    xs, ws = [], []
    for a, b in ((0.0, 1.0), (1.0, 3.0), (3.0, 6.5)):
        x, w = _gl01(order)
        xs.append(a + (b - a) * x)
        ws.append((b - a) * w)
    return np.concatenate(xs), np.concatenate(ws)


def _shell_average(profile: RhoProfile, s: float, r: np.ndarray, order: int) -> np.ndarray:
    """Average of heat (1 - heat) at time s over spheres of radii ``r``."""
    if profile.kind == "constant":
        p = profile.params[0]
        return np.full(r.shape, p * (1 - p))
    if profile.kind == "gaussian_bump":
        u = np.zeros(r.shape + (3,))
        u[..., 0] = r
        h = heat_value(profile, s, u)
        return h * (1 - h)
    c, w = _gl01(order)
    c = 2 * c - 1
    if profile.kind == "logistic_axis":
        # depends on u_1 = r cos(theta) only; average over cos(theta) in [-1, 1]
        u = np.zeros(r.shape + c.shape + (3,))
        u[..., 0] = r[:, None] * c[None, :]
        h = heat_value(profile, s, u)
        return (h * (1 - h)) @ w
    # generic: product rule in (cos theta, phi)
    phi = 2 * math.pi * np.arange(2 * order) / (2 * order)
    st = np.sqrt(1 - c * c)
    dirs = np.stack([np.outer(c, np.ones_like(phi)), np.outer(st, np.cos(phi)),
                     np.outer(st, np.sin(phi))], axis=-1).reshape(-1, 3)
    wts = np.outer(w, np.full(phi.shape, 1 / phi.size)).ravel()
    h = heat_value(profile, s, r[:, None, None] * dirs[None, :, :])
    return (h * (1 - h)) @ wts


def _zeta_cov_order(profile: RhoProfile, t1: float, t2: float, order: int) -> float:
    # s = t1 - tau, tau = t1 w^2.  With r = 2 sqrt(tau) rho the inner integral
    # is (1 / 4 pi) * 2 sqrt(tau) * int erfc(rho) erfc(rho sqrt(tau / tau2)) avg(r) drho,
    # since the r^2 of the shell measure cancels the 1 / r^2 of b b.
    w, ww = _gl01(order)
    rho, wr = _radial_nodes(order)
    total = 0.0
    for wi, wwi in zip(w, ww):
        tau = t1 * wi * wi
        if tau == 0:
            continue
        tau2 = tau + (t2 - t1)
        s = t1 - tau
        avg = _shell_average(profile, s, 2 * math.sqrt(tau) * rho, order)
        inner = (2 * math.sqrt(tau) / (4 * math.pi)) * (
            special.erfc(rho) * special.erfc(rho * math.sqrt(tau / tau2)) * avg) @ wr
        total += wwi * 2 * t1 * wi * inner
    return total


def zeta_cov(profile: RhoProfile, t1: float, t2: float, order: int = 48, *,
             with_error: bool = False):
    """Cov(zeta_{t1}, zeta_{t2}) for t1 <= t2 (symmetric in its arguments)."""
    if t1 < 0 or t2 < 0:
        raise ValueError("times must be nonnegative")
    t1, t2 = min(t1, t2), max(t1, t2)
    if t1 == 0:
        out = Approx(0.0, 0.0)
    else:
        hi = _zeta_cov_order(profile, t1, t2, order)
        lo = _zeta_cov_order(profile, t1, t2, order // 2)
        # radial cut at rho = 6.5 loses at most erfc(6.5) of the integrand
        out = Approx(hi, abs(hi - lo) + 1e-18 * t1**1.5)
    return out if with_error else out.value


def zeta_cov_matrix(profile: RhoProfile, grid, order: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Covariance matrix of zeta on ``grid`` and its entrywise error bounds."""
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    cov, err = np.zeros((n, n)), np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            v = zeta_cov(profile, grid[i], grid[j], order, with_error=True)
            cov[i, j] = cov[j, i] = v.value
            err[i, j] = err[j, i] = v.error
    return cov, err


class NotPositiveSemidefinite(ValueError):
    pass


def _factor(cov: np.ndarray, jitter: float = 1e-10) -> np.ndarray:
    """Symmetric square root; fails if an eigenvalue is below -jitter."""
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if vals.size and vals.min() < -jitter:
        raise NotPositiveSemidefinite(f"smallest eigenvalue {vals.min():.3e}")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def is_psd(cov: np.ndarray, jitter: float = 1e-10) -> bool:
    try:
        _factor(cov, jitter)
    except NotPositiveSemidefinite:
        return False
    return True


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be increasing and start at 0")
    return grid


def sample_zeta_path(profile: RhoProfile, grid, rng: np.random.Generator, n_paths: int = 1,
                     *, scaled: bool = True) -> np.ndarray:
    """Gaussian paths (n_paths, len(grid)) with covariance 12 gamma_3 zeta_cov
    (``scaled=False`` drops the 12 gamma_3 factor)."""
    grid = _check_grid(grid)
    factor = 12 * gamma(3).value if scaled else 1.0
    cov, _ = zeta_cov_matrix(profile, grid[1:])
    root = _factor(factor * cov)
    out = np.zeros((n_paths, grid.size))
    out[:, 1:] = rng.standard_normal((n_paths, grid.size - 1)) @ root.T
    return out


def sample_ito_path(profile: RhoProfile, d: int, grid, rng: np.random.Generator,
                    n_paths: int = 1) -> np.ndarray:
    """Paths of the Ito integral of A_{s,d}: independent Gaussian increments."""
    grid = _check_grid(grid)
    var = np.array([ito_variance(profile, t, d) for t in grid])
    inc = np.sqrt(np.clip(np.diff(var), 0.0, None))
    steps = rng.standard_normal((n_paths, grid.size - 1)) * inc
    return np.concatenate([np.zeros((n_paths, 1)), np.cumsum(steps, axis=1)], axis=1)


# ---------------------------------------------------------------- b_t^N -> b_t

def lattice_round(u, N: float) -> np.ndarray:
    """The site x with u - x / sqrt N in (-1/(2 sqrt N), 1/(2 sqrt N)]^3."""
    return np.ceil(np.asarray(u, dtype=float) * math.sqrt(N) - 0.5).astype(np.int64)


def b_lattice(t: float, s: float, u, N: float) -> float:
    """b_t^N(s, u) = sqrt N * v(N (t - s), lattice_round(u))."""
    x = lattice_round(u, N)
    T = N * (t - s)
    if T <= 0:
        return 0.0
    val, _ = _panel_integral(lambda r: _coordinate_products(r, x[None, :]), T)
    return math.sqrt(N) * float(val[0])


def _v_cont(T: float, r):
    r = np.asarray(r, dtype=float)
    return special.erfc(r / (2 * math.sqrt(T))) / (4 * math.pi * r)


def _grad_sq(T: float, r):
    # |d/dr v_cont|^2
    r = np.asarray(r, dtype=float)
    g = (special.erfc(r / (2 * math.sqrt(T))) / r**2
         + np.exp(-r * r / (4 * T)) / (r * math.sqrt(math.pi * T))) / (4 * math.pi)
    return g * g


@lru_cache(maxsize=None)
def _orbits(K: int):
    """Representatives 0 <= x1 <= x2 <= x3 with |x| <= K and orbit sizes."""
    reps, mult = [], []
    for x in itertools.combinations_with_replacement(range(K + 1), 3):
        if x[0] ** 2 + x[1] ** 2 + x[2] ** 2 > K * K:
            continue
        signs = 2 ** sum(1 for c in x if c)
        perms = len(set(itertools.permutations(x)))
        reps.append(x)
        mult.append(signs * perms)
    return np.array(reps, dtype=np.int64), np.array(mult, dtype=float)


@lru_cache(maxsize=None)
def _cube_rule(order: int):
    x, w = _gl01(order)
    x = x - 0.5
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    wt = np.einsum("i,j,k->ijk", w, w, w).ravel()
    return g, wt


@lru_cache(maxsize=None)
def _pyramid_rule(order: int):
    # y = lam * (1/2, a, b): one of six pyramids of the unit cube at the origin,
    # Jacobian lam^2 / 2
    lam, wl = _gl01(order)
    a, wa = _gl01(order)
    a = a - 0.5
    L, A, B = np.meshgrid(lam, a, a, indexing="ij")
    W = np.einsum("i,j,k->ijk", wl, wa, wa)
    dirs = np.stack([np.full(A.shape, 0.5), A, B], axis=-1)
    return L.ravel(), dirs.reshape(-1, 3), W.ravel()


def _J(T: float, K: int, order: int) -> float:
    """Sum over sites x of the integral over the unit cube at x of
    (v(T, x) - v_cont(T, y))^2 dy; sites beyond radius K enter through the
    gradient (cell-averaging) term of the continuum kernel."""
    reps, mult = _orbits(K)
    v, _ = _panel_integral(lambda r: _coordinate_products(r, reps), T)
    pts, wts = _cube_rule(order)
    # off-origin cubes
    y = reps[1:, None, :] + pts[None, :, :]
    ry = np.linalg.norm(y, axis=-1)
    near = (((v[1:, None] - _v_cont(T, ry)) ** 2) @ wts) @ mult[1:]
    grad_near = (_grad_sq(T, ry) @ wts) @ mult[1:] / 12
    # origin cube via six pyramids
    lam, dirs, pw = _pyramid_rule(order)
    nd = np.linalg.norm(dirs, axis=-1)
    r0 = lam * nd
    jac = lam**2 / 2
    origin = 6 * ((v[0] - _v_cont(T, r0)) ** 2 * jac) @ pw
    # gradient term outside B(1/2) within the origin cube: lam from 0.5 / |dir| to 1
    lo = 0.5 / nd
    lam2 = lo + (1 - lo) * lam
    r2 = lam2 * nd
    grad_origin = 6 * (_grad_sq(T, r2) * lam2**2 / 2 * (1 - lo)) @ pw / 12
    total_grad, _ = integrate.quad(lambda r: 4 * math.pi * r * r * _grad_sq(T, r) / 12,
                                   0.5, np.inf, epsabs=1e-14, epsrel=1e-10, limit=200)
    far = total_grad - grad_near - grad_origin
    return float(near + origin + far)


def b_l2_distance(t: float, N: float, *, K: int = 14, order: int = 8,
                  with_error: bool = False):
    """L^2 distance between b_t^N and b_t over [0, t] x R^3.

    With T = N (t - s) and u = y / sqrt N the squared distance is
    N^{-3/2} * integral over [0, N t] of J(T) dT, where J compares the lattice
    potential v(T, x) with the continuum one on unit cells.  The error bound
    compares the near-field radius K with K - 4 and the cube rule with its
    order + 4 version.
    """
    if N < 1 or t <= 0:
        raise ValueError("need N >= 1 and t > 0")

    def dist(K_, order_):
        # dT = 2 w dw with T = w^2; J ~ sqrt(T) near 0 makes the w-integrand smooth
        W = math.sqrt(N * t)
        edges = [0.0]
        e = 0.5
        while e < W:
            edges.append(e)
            e *= 2
        edges.append(W)
        x, wgt = np.polynomial.legendre.leggauss(12)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            for xi, wi in zip(x, wgt):
                w = 0.5 * (b - a) * xi + 0.5 * (a + b)
                total += 0.5 * (b - a) * wi * 2 * w * _J(w * w, K_, order_)
        return math.sqrt(max(total, 0.0) * N**-1.5)

    val = dist(K, order)
    if not with_error:
        return val
    err = abs(val - dist(K - 4, order)) + abs(val - dist(K, order + 4))
    return Approx(val, err)


# ---------------------------------------------------------------- tables

@dataclass
class LimitLawTable:
    d: int
    profile_id: str
    time_grid: list[float]
    values: list[dict] = field(default_factory=list)
    zeta_cov: dict | None = None

    def to_json(self) -> dict:
        out = {"d": self.d, "profile_id": self.profile_id, "time_grid": self.time_grid,
               "values": self.values}
        if self.zeta_cov is not None:
            out["zeta_cov"] = self.zeta_cov
        return out

    @property
    def table_id(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"table_id": self.table_id, **self.to_json()}
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "LimitLawTable":
        payload = json.loads(Path(path).read_text())
        return cls(payload["d"], payload["profile_id"], payload["time_grid"],
                   payload["values"], payload.get("zeta_cov"))


def _entry(value: float, error: float) -> dict:
    return {"value": value, "error_bound": error}


def limit_table(profile: RhoProfile, d: int, time_grid) -> LimitLawTable:
    grid = [float(t) for t in time_grid]
    if any(t < 0 for t in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("time grid must be increasing and nonnegative")
    rows = []
    for t in grid:
        rho0 = heat_value(profile, t, np.zeros(d))
        row = {"t": t, "rho0": _entry(rho0, 1e-8)}
        if d >= 4:
            row["A"] = _entry(A_coeff(profile, t, d), A_coeff_error(profile, t, d))
            iv = ito_variance(profile, t, d, with_error=True)
            row["ito_var"] = _entry(iv.value, iv.error)
        rows.append(row)
    table = LimitLawTable(d, profile.profile_id, grid, rows)
    if d == 3:
        cov, err = zeta_cov_matrix(profile, grid)
        table.zeta_cov = {"values": cov.tolist(), "error_bounds": err.tolist()}
    return table
