"""Continuous-time simple random walk on Z^d.

The walk jumps at total rate ``2d`` to a uniformly chosen neighbour, so each
coordinate is an independent rate-2 walk whose law at time ``t`` is
``e^{-2t} I_k(2t)``.  Every integral over time below is evaluated with
Gauss-Legendre panels on a geometric partition of ``[0, T]``; integrals to
infinity add an analytic tail from the large-argument expansion of ``I_k``.
All of them return ``Approx(value, error)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

from . import _walks
from .rng import stream

CONSTANTS_VERSION = 1


class Approx(NamedTuple):
    value: float
    error: float


class DivergentIntegral(ValueError):
    pass


@dataclass(frozen=True)
class WalkPath:
    jump_times: np.ndarray
    positions: np.ndarray  # (n_jumps + 1, d); row j holds the site after jump j

    def position_at(self, t: float) -> np.ndarray:
        return self.positions[np.searchsorted(self.jump_times, t, side="right")]


def as_site(x, d: int | None = None) -> np.ndarray:
    site = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if site.ndim != 1:
        raise ValueError("a lattice site is a 1-d integer vector")
    if d is not None and site.shape[0] != d:
        raise ValueError(f"site {tuple(site)} is not in Z^{d}")
    return site


def neighbors(x) -> list[tuple[int, ...]]:
    x = as_site(x)
    out = []
    for i in range(x.shape[0]):
        for step in (1, -1):
            y = x.copy()
            y[i] += step
            out.append(tuple(int(c) for c in y))
    return out


def sample_walk(x0, horizon: float, rng: np.random.Generator) -> WalkPath:
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    times, pos = _walks.sample_path(rng, as_site(x0), float(horizon))
    return WalkPath(times, pos)


def truncation_radius(t: float) -> int:
    """Per-coordinate radius beyond which the 1-d kernel mass is < 1e-10."""
    return int(math.ceil(2 * t + 10 * math.sqrt(2 * t) + 10))


def kernel_1d(t, k):
    """P(rate-2 walk on Z moves by k in time t) = e^{-2t} I_k(2t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    return special.ive(np.abs(np.asarray(k)), 2.0 * t)


def kernel_table(t: float, radius: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Offsets -R..R and the 1-d kernel at time ``t`` on them."""
    r = truncation_radius(t) if radius is None else radius
    ks = np.arange(-r, r + 1)
    return ks, kernel_1d(t, ks)


def transition_prob(t, x) -> float:
    """p_t(0, x) as the product of the coordinate kernels."""
    x = as_site(x)
    return float(np.prod(kernel_1d(t, x)))


# ---------------------------------------------------------------- quadrature

@lru_cache(maxsize=None)
def _gl(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _edges(T: float, first: float = 0.25) -> np.ndarray:
    edges = [0.0]
    e = first
    while e < T:
        edges.append(e)
        e *= 2.0
    edges.append(T)
    return np.array(edges)


def panel_nodes(T: float, order: int = 32, first: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on geometric panels of [0, T]."""
    if T <= 0:
        return np.zeros(0), np.zeros(0)
    x, w = _gl(order)
    edges = _edges(T, first)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def _coordinate_products(s: np.ndarray, sites: np.ndarray) -> np.ndarray:
    """p_s(0, x) for every node s (rows) and site x (columns)."""
    sites = np.abs(np.atleast_2d(sites))
    ks = np.unique(sites)
    table = special.ive(ks[None, :], 2.0 * s[:, None])
    idx = np.searchsorted(ks, sites)
    out = np.ones((s.shape[0], sites.shape[0]))
    for i in range(sites.shape[1]):
        out *= table[:, idx[:, i]]
    return out


def _panel_integral(f, T: float, order: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Integral of vector-valued ``f(s)`` over [0, T] and a crude error estimate."""
    s, w = panel_nodes(T, order)
    hi = w @ f(s)
    s2, w2 = panel_nodes(T, order // 2)
    lo = w2 @ f(s2)
    return hi, np.abs(hi - lo)


def _asymptotic_coeffs(k: int, terms: int) -> np.ndarray:
    # e^{-z} I_k(z) ~ (2 pi z)^{-1/2} sum_j c_j z^{-j}
    c = np.empty(terms)
    c[0] = 1.0
    for j in range(1, terms):
        c[j] = -c[j - 1] * (4 * k * k - (2 * j - 1) ** 2) / (j * 8)
    return c


def _tail(sites: np.ndarray, T: float, power: int, terms: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Integral over [T, inf) of s^power p_s(0, x) from the Bessel expansion."""
    sites = np.abs(np.atleast_2d(sites))
    d = sites.shape[1]
    vals = np.empty(sites.shape[0])
    errs = np.empty(sites.shape[0])
    for n, x in enumerate(sites):
        poly = np.array([1.0])
        for k in x:
            poly = np.convolve(poly, _asymptotic_coeffs(int(k), terms))[:terms]
        # p_s ~ (4 pi s)^{-d/2} sum_j poly_j (2 s)^{-j}
        terms_ = []
        for j, c in enumerate(poly):
            e = power - d / 2 - j + 1
            terms_.append(c * (4 * math.pi) ** (-d / 2) * 2.0 ** (-j) * T ** e / (-e))
        vals[n] = sum(terms_)
        errs[n] = abs(terms_[-1])
    return vals, errs


def _cut(sites: np.ndarray, base: float = 4096.0) -> float:
    kmax = float(np.max(np.abs(sites))) if sites.size else 0.0
    cut = base
    while 2 * cut < 200 * max(kmax, 1.0) ** 2:
        cut *= 2
    return cut


def green_continuous(x) -> Approx | tuple[np.ndarray, np.ndarray]:
    """g_inf(x) = integral over [0, inf) of p_s(0, x); needs d >= 3.

    Accepts one site or an array of sites (n, d); the latter returns arrays.
    """
    sites = np.atleast_2d(np.asarray(x, dtype=np.int64))
    if sites.shape[1] < 3:
        raise DivergentIntegral("the walk is recurrent for d <= 2")
    T = _cut(sites)
    body, berr = _panel_integral(lambda s: _coordinate_products(s, sites), T)
    tail, terr = _tail(sites, T, power=0)
    val, err = body + tail, berr + terr + 1e-15 * np.abs(body)
    if np.ndim(x) == 1:
        return Approx(float(val[0]), float(err[0]))
    return val, err


def green_discrete(x) -> Approx:
    """Expected number of visits to x of the discrete-time walk from 0."""
    site = as_site(x)
    v, e = green_continuous(site)
    return Approx(2 * site.shape[0] * v, 2 * site.shape[0] * e)


@lru_cache(maxsize=None)
def _gamma_green(d: int) -> Approx:
    g, e = green_discrete(np.zeros(d, dtype=np.int64))
    return Approx(1.0 / g, e / g**2)


def gamma(d: int, method: str = "green", *, samples: int = 100_000, horizon: float = 1e3,
          seed: int = 0) -> Approx:
    """Escape probability from a neighbour of the origin, with an error bound.

    ``method="green"`` inverts the Green function at the origin.  ``"monte_carlo"``
    simulates ``samples`` walks from e1 on [0, horizon]; the half-width adds
    three standard errors to half the bound on hits after the horizon.
    """
    if d <= 0:
        raise ValueError("dimension must be positive")
    if d <= 2:
        return Approx(0.0, 0.0)
    if method == "green":
        return _gamma_green(d)
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    rng = stream(seed, "lattice_rw", f"gamma_mc/{d}")
    escaped = _walks.escape_counts(rng, d, samples, float(horizon))
    p = escaped / samples
    late = late_hit_bound(d, horizon)
    se = math.sqrt(max(p * (1 - p), 1.0 / samples) / samples)
    return Approx(p - late / 2, 3 * se + late / 2)


def late_hit_bound(d: int, horizon: float) -> float:
    """Upper bound on P(walk from e1 first hits 0 after ``horizon``).

    Each visit to the origin lasts an Exp(2d) time, so the probability of a
    visit after ``horizon`` is at most 2d times the expected time spent at the
    origin after ``horizon``.
    """
    e1 = np.zeros((1, d), dtype=np.int64)
    e1[0, 0] = 1
    total, _ = green_continuous(e1)
    body, berr = _panel_integral(lambda s: _coordinate_products(s, e1), horizon)
    return float(2 * d * (total[0] - body[0] + berr[0]))


def hit_prob(x) -> float:
    """Phi(x): probability the walk from x visits the origin at some t > 0."""
    site = as_site(x)
    if not site.any():
        return 1.0
    g, _ = green_continuous(np.vstack([site, np.zeros_like(site)]))
    return float(g[0] / g[1])


@lru_cache(maxsize=None)
def theta_green_integral(d: int) -> Approx:
    """Integral over [0, inf) of theta * p_theta(0, 0); finite iff d >= 5."""
    if d <= 4:
        raise DivergentIntegral(f"integral of theta p_theta(0,0) diverges for d={d}")
    zero = np.zeros((1, d), dtype=np.int64)
    T = 4096.0
    body, berr = _panel_integral(lambda s: s[:, None] * _coordinate_products(s, zero), T)
    tail, terr = _tail(zero, T, power=1)
    return Approx(float(body[0] + tail[0]), float(berr[0] + terr[0] + 1e-15 * body[0]))


def g_N(x, N: float) -> Approx | tuple[np.ndarray, np.ndarray]:
    """g_N(x) = integral over [0, inf) of e^{-s/N} p_s(0, x) ds."""
    if N < 1:
        raise ValueError("N must be >= 1")
    sites = np.atleast_2d(np.asarray(x, dtype=np.int64))
    T = 50.0 * N
    val, err = _panel_integral(lambda s: np.exp(-s / N)[:, None] * _coordinate_products(s, sites), T)
    err = err + N * math.exp(-50.0)
    if np.ndim(x) == 1:
        return Approx(float(val[0]), float(err[0]))
    return val, err


def g_N_box_sum(d: int, N: float, radius: int) -> Approx:
    """Sum of g_N(x) over the box |x|_inf <= radius, using the product form."""
    T = 50.0 * N
    ks = np.arange(-radius, radius + 1)

    def f(s):
        mass = special.ive(ks[None, :], 2.0 * s[:, None]).sum(axis=1)
        return (np.exp(-s / N) * mass**d)[:, None]

    val, err = _panel_integral(f, T)
    return Approx(float(val[0]), float(err[0] + N * math.exp(-50.0)))


def g_N_sq_sum(d: int, N: float) -> Approx:
    """Sum over Z^d of g_N(x)^2, via integral of theta e^{-theta/N} p_theta(0,0)."""
    zero = np.zeros((1, d), dtype=np.int64)
    T = 50.0 * N
    val, err = _panel_integral(
        lambda s: (s * np.exp(-s / N))[:, None] * _coordinate_products(s, zero), T)
    return Approx(float(val[0]), float(err[0] + T * T * math.exp(-50.0)))


def v_kernel(t: float, x) -> Approx | tuple[np.ndarray, np.ndarray]:
    """v(t, x) = integral over [0, t] of p_s(0, x) ds."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    sites = np.atleast_2d(np.asarray(x, dtype=np.int64))
    if t == 0:
        val, err = np.zeros(sites.shape[0]), np.zeros(sites.shape[0])
    else:
        val, err = _panel_integral(lambda s: _coordinate_products(s, sites), float(t))
    if np.ndim(x) == 1:
        return Approx(float(val[0]), float(err[0]))
    return val, err


# ---------------------------------------------------------------- constants

def constants_table(dims: Sequence[int] = (3, 4, 5, 6)) -> list[dict]:
    rows = []
    for d in dims:
        g = gamma(d)
        rows.append({"d": d, "name": "gamma", "value": g.value, "error_bound": g.error,
                     "method": "green"})
        if d >= 5:
            th = theta_green_integral(d)
            rows.append({"d": d, "name": "theta_green_integral", "value": th.value,
                         "error_bound": th.error, "method": "gauss_legendre+bessel_tail"})
    return rows


def write_constants(path, dims: Sequence[int] = (3, 4, 5, 6)) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"version": CONSTANTS_VERSION, "constants": constants_table(dims)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_constants(path) -> dict[tuple[int, str], Approx]:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CONSTANTS_VERSION:
        raise ValueError(f"unsupported constants version {payload.get('version')}")
    return {(row["d"], row["name"]): Approx(row["value"], row["error_bound"])
            for row in payload["constants"]}
