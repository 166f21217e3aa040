"""Keyed, counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, module, op, replica)``.  A replica therefore always sees
the same numbers no matter how many threads run or in which order replicas are
scheduled.  Site-indexed uniforms (initial configurations) use a stateless
64-bit hash so that a site's initial bit does not depend on the torus size.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MODULE_IDS = {
    "lattice_rw": 1,
    "rho_profile": 2,
    "dual_engine": 3,
    "forward_sim": 4,
    "limit_laws": 5,
    "stats_harness": 6,
}

_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def op_id(name: str) -> int:
    return fnv1a_64(name.encode()) & 0xFFFFFFFF


def stream_key(seed: int, module: str, op: str, replica: int = 0) -> np.ndarray:
    ss = np.random.SeedSequence([seed & _MASK64, MODULE_IDS[module], op_id(op), replica])
    return ss.generate_state(2, np.uint64)


def stream(seed: int, module: str, op: str, replica: int = 0) -> np.random.Generator:
    """Private Philox stream for one replica of one operation."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, module, op, replica)))


def site_key(seed: int, module: str, op: str, replica: int = 0) -> int:
    return int(stream_key(seed, module, op, replica)[0])


@njit(cache=True, inline="always")
def _mix64(z):
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def site_uniforms(key, coords):
    """Uniform(0,1) per row of ``coords`` (int64, shape (n, d)), keyed by ``key``."""
    n, d = coords.shape
    out = np.empty(n)
    golden = np.uint64(0x9E3779B97F4A7C15)
    for i in range(n):
        h = np.uint64(key)
        for j in range(d):
            h = _mix64(h + golden + np.uint64(coords[i, j] & 0xFFFFFFFFFFFF))
        h = _mix64(h ^ np.uint64(d))
        out[i] = (h >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return out
