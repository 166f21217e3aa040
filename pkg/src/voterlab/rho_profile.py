"""Initial density profiles and the quantities derived from them.

A profile ``rho`` maps R^d into (0, 1).  Site ``x`` of the rescaled product
measure carries opinion 1 with probability ``rho(x / sqrt(N))``.  The heat
semigroup is ``heat(s, u) = E rho(W_{2s} + u)`` (W a standard Brownian motion)
and ``mean_occupancy`` is the exact lattice counterpart: the mean opinion at a
site after the dual walk has run for a given time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .lattice_rw import as_site, kernel_1d, truncation_radius
from .rng import site_uniforms

KINDS = ("constant", "logistic_axis", "gaussian_bump")
_PARAMS = {
    "constant": ("p",),
    "logistic_axis": ("lo", "hi"),
    "gaussian_bump": ("base", "amp", "width"),
}


@dataclass(frozen=True)
class RhoProfile:
    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if len(self.params) != len(_PARAMS[self.kind]):
            raise ValueError(f"{self.kind} takes parameters {_PARAMS[self.kind]}")
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        lo, hi = self.range
        if not (0.0 < lo and hi < 1.0):
            raise ValueError(f"{self.profile_id} leaves (0, 1)")
        if self.kind == "gaussian_bump" and self.params[2] <= 0:
            raise ValueError("width must be positive")

    def __getattr__(self, name):
        names = _PARAMS.get(self.__dict__.get("kind"), ())
        if name in names:
            return self.params[names.index(name)]
        raise AttributeError(name)

    @property
    def range(self) -> tuple[float, float]:
        """Closed interval containing every value of the profile."""
        if self.kind == "constant":
            return self.params[0], self.params[0]
        if self.kind == "logistic_axis":
            lo, hi = self.params
            return min(lo, hi), max(lo, hi)
        base, amp, _ = self.params
        return min(base, base + amp), max(base, base + amp)

    @property
    def lipschitz_bound(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "logistic_axis":
            lo, hi = self.params
            return abs(hi - lo) / 4.0
        _, amp, width = self.params
        return abs(amp) / (width * math.sqrt(math.e))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def profile_id(self) -> str:
        args = ",".join(f"{n}={v:g}" for n, v in zip(_PARAMS[self.kind], self.params))
        return f"{self.kind}({args})"

    def to_spec(self) -> dict:
        return {"type": self.kind, **dict(zip(_PARAMS[self.kind], self.params))}

    @classmethod
    def from_spec(cls, spec: dict) -> "RhoProfile":
        kind = spec["type"]
        if kind not in _PARAMS:
            raise ValueError(f"unknown profile kind {kind!r}")
        extra = set(spec) - {"type", *_PARAMS[kind]}
        if extra:
            raise ValueError(f"unexpected fields for {kind}: {sorted(extra)}")
        return cls(kind, tuple(spec[n] for n in _PARAMS[kind]))

    def __call__(self, u):
        return eval_profile(self, u)


def constant(p: float) -> RhoProfile:
    return RhoProfile("constant", (p,))


def logistic_axis(lo: float, hi: float) -> RhoProfile:
    return RhoProfile("logistic_axis", (lo, hi))


def gaussian_bump(base: float, amp: float, width: float) -> RhoProfile:
    return RhoProfile("gaussian_bump", (base, amp, width))


def eval_profile(profile: RhoProfile, u) -> np.ndarray | float:
    """rho(u); ``u`` has the coordinates on its last axis."""
    u = np.asarray(u, dtype=float)
    if profile.kind == "constant":
        out = np.full(u.shape[:-1], profile.params[0])
    elif profile.kind == "logistic_axis":
        lo, hi = profile.params
        out = lo + (hi - lo) * special.expit(u[..., 0])
    else:
        base, amp, width = profile.params
        out = base + amp * np.exp(-np.sum(u * u, axis=-1) / (2 * width * width))
    return float(out) if out.ndim == 0 else out


def sample_initial_bits(profile: RhoProfile, sites, N: float, key: int) -> np.ndarray:
    """Independent opinions for ``sites`` (n, d); each site uses its own hashed draw."""
    sites = np.ascontiguousarray(np.atleast_2d(sites), dtype=np.int64)
    u = site_uniforms(np.uint64(key), sites)
    rho = eval_profile(profile, sites / math.sqrt(N))
    return (u < rho).astype(np.uint8)


def sample_initial_bit(profile: RhoProfile, x, N: float, key: int) -> int:
    if N < 1:
        raise ValueError("N must be >= 1")
    return int(sample_initial_bits(profile, as_site(x)[None, :], N, key)[0])


# ---------------------------------------------------------------- heat flow

@lru_cache(maxsize=None)
def _hermite(order: int):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / math.sqrt(2 * math.pi)


@lru_cache(maxsize=None)
def _step_panels(order: int):
    # composite Gauss-Legendre on [-40, 40], panels of width 2
    x, w = np.polynomial.legendre.leggauss(order // 4 if order >= 32 else 8)
    edges = np.arange(-40.0, 40.0 + 1e-9, 2.0)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * x + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * w).ravel()


def _smoothed_logistic(a, sigma: float, order: int) -> np.ndarray:
    """E expit(a + sigma Z) for standard normal Z, vectorised over ``a``."""
    a = np.asarray(a, dtype=float)
    if sigma == 0.0:
        return special.expit(a)
    if sigma <= 2.0:
        x, w = _hermite(order)
        return special.expit(a[..., None] + sigma * x) @ w
    # Step part in closed form; the remainder expit(v) - 1{v > 0}, v = a + sigma z,
    # is concentrated on |v| < 40 and integrated in v.
    v, w = _step_panels(order)
    z = (v - a[..., None]) / sigma
    corr = special.expit(v) - (v > 0)
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return special.ndtr(a / sigma) + (pdf * corr) @ w / sigma


def heat_value(profile: RhoProfile, s: float, u, order: int = 64, method: str = "auto"):
    """heat(s, u) = E rho(u + W_{2s}).

    The logistic profile reduces to a one-dimensional Gaussian average; the
    Gaussian bump convolves in closed form.  ``method="tensor"`` forces a
    tensorised Gauss-Hermite rule over all coordinates (used as a cross-check).
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    if order < 8:
        raise ValueError("quadrature order must be at least 8")
    u = np.asarray(u, dtype=float)
    if method == "tensor":
        return _heat_tensor(profile, s, u, order)
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    if s == 0 or profile.kind == "constant":
        return eval_profile(profile, u)
    if profile.kind == "logistic_axis":
        lo, hi = profile.params
        out = lo + (hi - lo) * _smoothed_logistic(u[..., 0], math.sqrt(2 * s), order)
    else:
        base, amp, width = profile.params
        d = u.shape[-1]
        spread = width * width + 2 * s
        out = base + amp * (width * width / spread) ** (d / 2) * np.exp(
            -np.sum(u * u, axis=-1) / (2 * spread))
    return float(out) if np.ndim(out) == 0 else out


def _heat_tensor(profile: RhoProfile, s: float, u: np.ndarray, order: int):
    x, w = _hermite(order)
    d = u.shape[-1]
    grids = np.meshgrid(*([x] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for i in range(d):
        weights = weights * w[np.searchsorted(x, nodes[:, i])]
    pts = u[..., None, :] + math.sqrt(2 * s) * nodes
    out = eval_profile(profile, pts) @ weights
    return float(out) if np.ndim(out) == 0 else out


def mean_occupancy(profile: RhoProfile, s: float, x, N: float) -> float:
    """E[eta_s(x)] under the rescaled product law, by one-walk duality.

    Evaluated as the truncated lattice sum of p_s(x, y) rho(y / sqrt N); the
    profiles are separable so the d-dimensional sum factorises.
    """
    if s < 0 or N < 1:
        raise ValueError("need s >= 0 and N >= 1")
    x = as_site(x)
    d = x.shape[0]
    if s == 0:
        return float(eval_profile(profile, x / math.sqrt(N)))
    r = truncation_radius(s)
    ks = np.arange(-r, r + 1)
    kern = kernel_1d(s, ks)
    mass = kern.sum()
    scale = math.sqrt(N)
    if profile.kind == "constant":
        return profile.params[0] * mass**d
    if profile.kind == "logistic_axis":
        lo, hi = profile.params
        first = kern @ (lo + (hi - lo) * special.expit((x[0] + ks) / scale))
        return float(first * mass ** (d - 1))
    base, amp, width = profile.params
    prod = 1.0
    for i in range(d):
        prod *= kern @ np.exp(-((x[i] + ks) / scale) ** 2 / (2 * width * width))
    return float(base * mass**d + amp * prod)
