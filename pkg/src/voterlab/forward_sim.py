"""Event-driven voter model on a torus and centred occupation-time paths.

Every ordered neighbour pair (x, y) carries a rate-1 Poisson clock; when it
rings x copies the opinion of y.  The total number of events on [0, T] is
Poisson(2d L^d T) and, given that number, the events are i.i.d. uniform over
edges and their times are uniform order statistics.  The loop therefore only
draws one uniform per event to pick the edge; the times of the few events that
flip a watched site are filled in afterwards from the order-statistic law.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy import integrate, stats

from .lattice_rw import as_site
from .limit_laws import h_scale
from .rho_profile import RhoProfile, mean_occupancy, sample_initial_bits
from .rng import _mix64, site_key, stream


@dataclass
class TorusState:
    """Opinions on the torus of odd side L with centred coordinates.

    ``bits`` is packed eight sites per byte (little bit order); site index
    runs with axis 0 fastest over coordinates shifted by (L - 1) / 2.
    """

    side: int
    d: int
    bits: np.ndarray

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise ValueError("torus side must be odd")
        if self.bits.dtype != np.uint8 or self.bits.shape != ((self.size + 7) // 8,):
            raise ValueError("packed bit array does not match side^d sites")

    @property
    def size(self) -> int:
        return self.side**self.d

    @property
    def half(self) -> int:
        return (self.side - 1) // 2

    @classmethod
    def from_sites(cls, side: int, d: int, values) -> "TorusState":
        values = np.asarray(values, dtype=np.uint8)
        if values.shape != (side**d,):
            raise ValueError("need one value per site")
        return cls(side, d, np.packbits(values, bitorder="little"))

    def unpacked(self) -> np.ndarray:
        return np.unpackbits(self.bits, count=self.size, bitorder="little")

    def index(self, x) -> int:
        """Index of the site with centred coordinates ``x``."""
        x = as_site(x, self.d)
        if np.any(np.abs(x) > self.half):
            raise ValueError(f"site {tuple(x)} is outside the torus")
        return int(((x + self.half) * self.side ** np.arange(self.d)).sum())

    def coords(self) -> np.ndarray:
        """Centred coordinates of every site in index order, shape (L^d, d)."""
        g = np.indices((self.side,) * self.d).reshape(self.d, -1)[::-1].T
        return np.ascontiguousarray(g - self.half)

    def __getitem__(self, x) -> int:
        i = self.index(x)
        return int((self.bits[i >> 3] >> (i & 7)) & 1)

    def copy(self) -> "TorusState":
        return TorusState(self.side, self.d, self.bits.copy())


@dataclass(frozen=True)
class FlipLog:
    """Opinion history of one site: ``bits[k]`` holds on [times[k], times[k+1])."""

    site: tuple[int, ...]
    times: np.ndarray
    bits: np.ndarray

    def value_at(self, t):
        return self.bits[np.searchsorted(self.times, t, side="right") - 1]

    def integral(self, t: float) -> float:
        """Time spent with opinion 1 on [0, t]."""
        k = np.searchsorted(self.times, t, side="right")
        ends = np.append(self.times[1:k], t)
        return float(((ends - self.times[:k]) * self.bits[:k]).sum())


@dataclass
class RunResult:
    state: TorusState
    events: int
    logs: dict[tuple[int, ...], FlipLog] = field(default_factory=dict)


@dataclass(frozen=True)
class OccupationPath:
    grid: np.ndarray
    values: np.ndarray
    flips: FlipLog | None = None


# ---------------------------------------------------------------- sizing

def choose_torus_side(d: int, N: float, T: float, wrap_tol: float = 1e-3) -> int:
    """Smallest odd L for which a rate-4d difference walk run for T N stays in
    the torus window with probability at least 1 - wrap_tol.

    Exit needs some coordinate to reach m = (L + 1) / 2.  Two bounds are used
    and the smaller wins: Freedman's inequality per coordinate (variance
    4 T N, unit jumps) times 2d, and P(Poisson(4d T N) >= m).
    """
    if not 0 < wrap_tol < 1:
        raise ValueError("wrap_tol must lie in (0, 1)")
    if d < 1 or N < 1 or T < 0:
        raise ValueError("need d >= 1, N >= 1, T >= 0")
    tn = T * N
    var = 4.0 * tn
    L = 3
    while True:
        m = (L + 1) // 2
        freedman = 2 * d * math.exp(-m * m / (2 * (var + m / 3)))
        poisson = stats.poisson.sf(m - 1, 4.0 * d * tn) if tn > 0 else 0.0
        if min(freedman, poisson) <= wrap_tol:
            return L
        L += 2


def predicted_events(d: int, L: int, horizon: float) -> float:
    return 2.0 * d * L**d * horizon


def init_state(d: int, side: int, profile: RhoProfile, N: float, key: int) -> TorusState:
    """Product initial law; bits depend only on (key, site), not on the side."""
    coords = TorusState(side, d, np.zeros((side**d + 7) // 8, np.uint8)).coords()
    return TorusState.from_sites(side, d, sample_initial_bits(profile, coords, N, key))


# ---------------------------------------------------------------- event loops
#
# The loops read their uniforms from a counter-based SplitMix64 sequence keyed
# by one 64-bit draw of the replica's Philox stream: event k uses
# mix(key + k * golden), so the sequence is fixed by (key, k) alone.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def _uniform(key, k):
    h = _mix64(key + np.uint64(k + 1) * _GOLDEN)
    return (h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def _get(bits, i):
    return (bits[i >> 3] >> (i & 7)) & 1


@njit(cache=True, inline="always")
def _put(bits, i, b):
    # unconditional read-modify-write: no data-dependent branch
    sh = i & 7
    bits[i >> 3] = (bits[i >> 3] & np.uint8(~(1 << sh) & 0xFF)) | np.uint8(b << sh)


def _build_loops(D: int):
    """Event loops specialised to dimension D (a compile-time constant, which
    lets the per-coordinate loop unroll; about 3x faster than a runtime d)."""

    @njit(nogil=True)
    def run(key, bits, L, n, watch):
        m = 2.0 * D
        rec_k, rec_w, rec_b = [0], [0], [0]
        for k in range(n):
            # one uniform -> direction in [0, 2D), then the D site digits
            u = _uniform(key, k) * m
            dr = int(u)
            u -= dr
            axis = dr >> 1
            step = ((dr & 1) << 1) - 1
            idx, src, stride = 0, 0, 1
            for i in range(D):
                u *= L
                c = int(u)
                u -= c
                idx += c * stride
                cb = c + step
                cb += L * (np.int64(cb < 0) - np.int64(cb >= L))
                src += (c + (cb - c) * np.int64(i == axis)) * stride
                stride *= L
            b = _get(bits, src)
            for w in range(watch.shape[0]):
                if watch[w] == idx and _get(bits, idx) != b:
                    rec_k.append(k + 1)
                    rec_w.append(w)
                    rec_b.append(b)
            _put(bits, idx, b)
        return np.array(rec_k[1:]), np.array(rec_w[1:]), np.array(rec_b[1:], dtype=np.uint8)

    @njit(nogil=True)
    def run_coupled(key, big, Lb, small, Ls, n, watch_b, watch_s):
        # Events of the large torus; those at sites inside the centred small
        # window are also applied to the small torus with its own wrap.
        # Restricting a Poisson edge process to a sub-window is again a Poisson
        # edge process, so the small torus evolves with its correct law.
        shift = (Lb - Ls) // 2
        m = 2.0 * D
        rk, rw, rb = [0], [0], [0]
        applied = 0
        nw = watch_b.shape[0]
        for k in range(n):
            u = _uniform(key, k) * m
            dr = int(u)
            u -= dr
            axis = dr >> 1
            step = ((dr & 1) << 1) - 1
            idx, src, stride = 0, 0, 1
            sidx, ssrc, sstride, inside = 0, 0, 1, 1
            for i in range(D):
                u *= Lb
                c = int(u)
                u -= c
                on = np.int64(i == axis)
                idx += c * stride
                cb = c + step
                cb += Lb * (np.int64(cb < 0) - np.int64(cb >= Lb))
                src += (c + (cb - c) * on) * stride
                stride *= Lb
                c -= shift
                inside &= np.int64(c >= 0) & np.int64(c < Ls)
                sidx += c * sstride
                cb = c + step
                cb += Ls * (np.int64(cb < 0) - np.int64(cb >= Ls))
                ssrc += (c + (cb - c) * on) * sstride
                sstride *= Ls
            b = _get(big, src)
            for w in range(nw):
                if watch_b[w] == idx and _get(big, idx) != b:
                    rk.append(k + 1)
                    rw.append(w)
                    rb.append(b)
            _put(big, idx, b)
            if not inside:
                continue
            applied += 1
            b = _get(small, ssrc)
            for w in range(watch_s.shape[0]):
                if watch_s[w] == sidx and _get(small, sidx) != b:
                    rk.append(k + 1)
                    rw.append(nw + w)
                    rb.append(b)
            _put(small, sidx, b)
        return np.array(rk[1:]), np.array(rw[1:]), np.array(rb[1:], dtype=np.uint8), applied

    return run, run_coupled


@lru_cache(maxsize=None)
def _loops(d: int):
    return _build_loops(d)


def _loop_key(rng: np.random.Generator) -> np.uint64:
    return np.uint64(rng.bit_generator.random_raw())


def _event_times(rng: np.random.Generator, ks: np.ndarray, n: int, T: float) -> np.ndarray:
    """Times of events with (1-based, sorted) indices ``ks`` among n uniform
    events on [0, T], drawn from the order-statistic law one index at a time."""
    uniq = np.unique(ks)
    times = np.empty(uniq.shape[0])
    t, prev = 0.0, 0
    for j, k in enumerate(uniq):
        t = t + (T - t) * rng.beta(k - prev, n - k + 1)
        times[j] = t
        prev = k
    return times[np.searchsorted(uniq, ks)]


def _logs(states, sites, ks, ws, bs, times, offsets):
    out = []
    for state, group, off in zip(states, sites, offsets):
        logs = {}
        for w, site in enumerate(group):
            sel = ws == off + w
            init = state[site]
            logs[site] = FlipLog(site, np.concatenate([[0.0], times[sel]]),
                                 np.concatenate([[init], bs[sel]]).astype(np.uint8))
        out.append(logs)
    return out


def run_voter(state: TorusState, horizon: float, rng: np.random.Generator,
              watched: Sequence = (), observer: Callable | None = None) -> RunResult:
    """Run the torus for ``horizon`` units of model time (state is modified).

    ``observer(site, time, bit)`` is called for every flip of a watched site
    in time order once the run finishes.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    sites = [tuple(int(c) for c in as_site(x, state.d)) for x in watched]
    start = state.copy()
    n = int(rng.poisson(predicted_events(state.d, state.side, horizon))) if horizon > 0 else 0
    watch = np.array([state.index(x) for x in sites], dtype=np.int64)
    ks, ws, bs = _loops(state.d)[0](_loop_key(rng), state.bits, state.side, n, watch)
    times = _event_times(rng, ks, n, horizon)
    logs = _logs([start], [sites], ks, ws, bs, times, [0])[0]
    if observer is not None:
        for j in range(ks.shape[0]):
            observer(sites[ws[j]], float(times[j]), int(bs[j]))
    return RunResult(state, n, logs)


def run_coupled(big: TorusState, small: TorusState, horizon: float, rng: np.random.Generator,
                watched: Sequence = ()) -> tuple[RunResult, RunResult]:
    """Run two tori of different sides from one set of edge clocks."""
    if big.d != small.d or big.side < small.side:
        raise ValueError("need a larger torus of the same dimension")
    sites = [tuple(int(c) for c in as_site(x, big.d)) for x in watched]
    starts = [big.copy(), small.copy()]
    n = int(rng.poisson(predicted_events(big.d, big.side, horizon))) if horizon > 0 else 0
    wb = np.array([big.index(x) for x in sites], dtype=np.int64)
    wsm = np.array([small.index(x) for x in sites], dtype=np.int64)
    ks, ws, bs, applied = _loops(big.d)[1](_loop_key(rng), big.bits, big.side, small.bits,
                                           small.side, n, wb, wsm)
    times = _event_times(rng, ks, n, horizon)
    lb, ls = _logs(starts, [sites, sites], ks, ws, bs, times, [0, len(sites)])
    return RunResult(big, n, lb), RunResult(small, int(applied), ls)


# ---------------------------------------------------------------- replicas

def replica_run(profile: RhoProfile, d: int, N: float, T: float, side: int, replica: int,
                seed: int, watched: Sequence) -> RunResult:
    """One forward replica on [0, T N] from the rescaled product law."""
    key = site_key(seed, "forward_sim", "init", replica)
    state = init_state(d, side, profile, N, key)
    rng = stream(seed, "forward_sim", f"events/{side}", replica)
    return run_voter(state, T * N, rng, watched)


def coupled_replica(profile: RhoProfile, d: int, N: float, T: float, side: int, replica: int,
                    seed: int, watched: Sequence) -> tuple[RunResult, RunResult]:
    """Replica on side and 2 side - 1 tori sharing initial bits and edge clocks."""
    key = site_key(seed, "forward_sim", "init", replica)
    small = init_state(d, side, profile, N, key)
    big = init_state(d, 2 * side - 1, profile, N, key)
    rng = stream(seed, "forward_sim", f"coupled/{side}", replica)
    return run_coupled(big, small, T * N, rng, watched)


def run_replicas(profile: RhoProfile, d: int, N: float, T: float, side: int, replicas: int,
                 seed: int, watched: Sequence, threads: int = 1) -> list[RunResult]:
    def one(r):
        return replica_run(profile, d, N, T, side, r, seed, watched)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(replicas)))
    return [one(r) for r in range(replicas)]


# ---------------------------------------------------------------- occupation

@lru_cache(maxsize=4096)
def _centering(profile: RhoProfile, x, N: float, a: float, b: float) -> float:
    if profile.is_constant:
        return profile.params[0] * (b - a)
    val, err = integrate.quad(lambda s: mean_occupancy(profile, s, x, N), a, b,
                              epsabs=1e-9, epsrel=1e-10, limit=200)
    if err > 1e-6:
        raise RuntimeError(f"centering quadrature error {err:.2e} exceeds 1e-6")
    return val


def occupation_path(flips: FlipLog, horizon: float, profile: RhoProfile, N: float,
                    grid) -> OccupationPath:
    """xi at the grid times: opinion integral minus its mean, cell by cell."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0:
        raise ValueError("grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[-1] > horizon:
        raise ValueError("grid exceeds the horizon")
    occ = np.array([flips.integral(t) for t in grid])
    cells = [_centering(profile, tuple(flips.site), float(N), float(a), float(b)) for a, b in zip(grid[:-1], grid[1:])]
    mean = np.concatenate([[0.0], np.cumsum(cells)])
    return OccupationPath(grid, occ - mean, flips)


def scaled_path(path: OccupationPath, d: int, N: float) -> OccupationPath:
    """Macroscopic time t = model time / N and values divided by h_d(N)."""
    if d <= 2:
        raise ValueError("scaled paths are supported for d >= 3")
    return OccupationPath(path.grid / N, path.values / h_scale(d, N), path.flips)


# ---------------------------------------------------------------- files

_RECORD = np.dtype([("t", "<f8"), ("bit", "u1")])


def write_flip_log(path, log: FlipLog) -> Path:
    """Little-endian u64 count then packed (f64 time, u8 bit) records; the first
    record is the opinion at time 0."""
    path = Path(path)
    rec = np.empty(log.times.shape[0], dtype=_RECORD)
    rec["t"], rec["bit"] = log.times, log.bits
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", rec.shape[0]))
        fh.write(rec.tobytes())
    return path


def read_flip_log(path, site=(0,)) -> FlipLog:
    raw = Path(path).read_bytes()
    (count,) = struct.unpack_from("<Q", raw)
    if len(raw) != 8 + count * _RECORD.itemsize:
        raise ValueError("truncated or oversized flip log")
    rec = np.frombuffer(raw, dtype=_RECORD, offset=8, count=count)
    return FlipLog(tuple(site), rec["t"].astype(float), rec["bit"].astype(np.uint8))


PATH_CSV_FIELDS = ("replica", "seed", "t", "xi_scaled")


def path_rows(replica: int, seed: int, path: OccupationPath) -> list[dict]:
    return [{"replica": replica, "seed": seed, "t": repr(float(t)), "xi_scaled": repr(float(v))}
            for t, v in zip(path.grid, path.values)]
