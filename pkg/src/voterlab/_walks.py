"""Compiled kernels for simple random walks on Z^d.

The walks here are continuous-time with total jump rate ``2d`` (one unit of
rate per directed neighbour).  Hitting questions only depend on the jump chain,
so the number of jumps over a horizon is drawn once (Poisson) and the chain is
advanced with *block skipping*: from a point at l1-distance ``D`` from the
origin the chain cannot hit the origin within ``D - 1`` steps, so those steps
are drawn at once from their multinomial/binomial law.  The result is exact.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _l1(z):
    s = 0
    for i in range(z.shape[0]):
        s += abs(z[i])
    return s


@njit(cache=True, nogil=True)
def _block(rng, counts, k):
    """Split ``k`` steps uniformly over the d coordinates."""
    d = counts.shape[0]
    rem = k
    for i in range(d - 1):
        c = rng.binomial(rem, 1.0 / (d - i)) if rem > 0 else 0
        counts[i] = c
        rem -= c
    counts[d - 1] = rem


@njit(cache=True, nogil=True)
def _signed(rng, n):
    if n == 0:
        return 0
    return 2 * rng.binomial(n, 0.5) - n


@njit(cache=True, nogil=True)
def chain_first_hit(rng, z, n_steps):
    """Advance the jump chain from ``z`` (modified in place) for at most
    ``n_steps`` steps; stop at the first visit to the origin.

    Returns the step index of the first visit (0 if ``z`` starts at the
    origin) or -1 if the origin is not visited.
    """
    d = z.shape[0]
    counts = np.empty(d, dtype=np.int64)
    done = 0
    dist = _l1(z)
    if dist == 0:
        return 0
    while done < n_steps:
        k = dist - 1
        if k < 1:
            k = 1
        if k > n_steps - done:
            k = n_steps - done
        if k == 1:
            i = int(rng.random() * d)
            if rng.random() < 0.5:
                z[i] += 1
            else:
                z[i] -= 1
        else:
            _block(rng, counts, k)
            for i in range(d):
                z[i] += _signed(rng, counts[i])
        done += k
        dist = _l1(z)
        if dist == 0:
            return done
    return -1


@njit(cache=True, nogil=True)
def escape_counts(rng, d, n_walks, horizon):
    """Number of rate-2d walks from e1 that avoid the origin on [0, horizon]."""
    z = np.zeros(d, dtype=np.int64)
    escaped = 0
    for _ in range(n_walks):
        z[:] = 0
        z[0] = 1
        n = rng.poisson(2.0 * d * horizon)
        if chain_first_hit(rng, z, n) < 0:
            escaped += 1
    return escaped


@njit(cache=True, nogil=True)
def _skellam_step(rng, z, t):
    # rate-2d walk increment over time t: each coordinate is Poisson(t) - Poisson(t)
    if t <= 0.0:
        return
    for i in range(z.shape[0]):
        z[i] += rng.poisson(t) - rng.poisson(t)


@njit(cache=True, nogil=True)
def skellam_positions(rng, n, d, t):
    out = np.zeros((n, d), dtype=np.int64)
    for j in range(n):
        _skellam_step(rng, out[j], t)
    return out


@njit(cache=True, nogil=True)
def coalescing_pairs(rng, xs, ys, durations, positions=True):
    """Simulate coalescing pairs started at rows of ``xs`` and ``ys``.

    The difference walk (rate 4d) is run until it hits the origin; the sum walk
    shares its jump coordinates with independent signs, which recovers both
    positions exactly.  After the meeting time the pair moves as one walk.

    Returns ``(coalesced, tau, end_primary, end_secondary, end_secondary_free)``
    where ``end_secondary_free`` is the endpoint an *independent* copy of the
    secondary walk would have had: it agrees with the coalesced one up to the
    meeting time and then continues with its own increments.  With
    ``positions=False`` the sum walk is not tracked and the endpoint arrays
    are left undefined.
    """
    m, d = xs.shape
    coalesced = np.zeros(m, dtype=np.bool_)
    tau = np.full(m, np.nan)
    end_p = np.empty((m, d), dtype=np.int64)
    end_s = np.empty((m, d), dtype=np.int64)
    end_f = np.empty((m, d), dtype=np.int64)
    diff = np.empty(d, dtype=np.int64)
    tot = np.empty(d, dtype=np.int64)
    counts = np.empty(d, dtype=np.int64)
    for j in range(m):
        T = durations[j]
        for i in range(d):
            diff[i] = xs[j, i] - ys[j, i]
            tot[i] = xs[j, i] + ys[j, i]
        n = rng.poisson(4.0 * d * T) if T > 0.0 else 0
        dist = _l1(diff)
        hit = 0 if dist == 0 else -1
        done = 0
        while hit < 0 and done < n:
            k = dist - 1
            if k < 1:
                k = 1
            if k > n - done:
                k = n - done
            if k == 1:
                i = int(rng.random() * d)
                diff[i] += 1 if rng.random() < 0.5 else -1
                if positions:
                    tot[i] += 1 if rng.random() < 0.5 else -1
            else:
                _block(rng, counts, k)
                for i in range(d):
                    diff[i] += _signed(rng, counts[i])
                    if positions:
                        tot[i] += _signed(rng, counts[i])
            done += k
            dist = _l1(diff)
            if dist == 0:
                hit = done
        if hit < 0:
            if not positions:
                continue
            for i in range(d):
                end_p[j, i] = (tot[i] + diff[i]) // 2
                end_s[j, i] = (tot[i] - diff[i]) // 2
                end_f[j, i] = end_s[j, i]
            continue
        coalesced[j] = True
        if hit == 0:
            t_meet = 0.0
        else:
            # hit-th of n uniform jump times on [0, T]
            t_meet = T * rng.beta(hit, n - hit + 1)
        tau[j] = t_meet
        if not positions:
            continue
        rest = T - t_meet
        for i in range(d):
            end_p[j, i] = tot[i] // 2
            end_f[j, i] = tot[i] // 2
        _skellam_step(rng, end_p[j], rest)
        _skellam_step(rng, end_f[j], rest)
        for i in range(d):
            end_s[j, i] = end_p[j, i]
    return coalesced, tau, end_p, end_s, end_f


@njit(cache=True, nogil=True)
def sample_path(rng, x0, horizon):
    """Exact jump-by-jump path of a rate-2d walk (jump times, positions)."""
    d = x0.shape[0]
    times = []
    pos = [x0.copy()]
    t = rng.exponential(1.0 / (2 * d))
    cur = x0.copy()
    while t <= horizon:
        i = int(rng.random() * d)
        cur = cur.copy()
        cur[i] += 1 if rng.random() < 0.5 else -1
        times.append(t)
        pos.append(cur)
        t += rng.exponential(1.0 / (2 * d))
    n = len(times)
    out_t = np.empty(n)
    out_p = np.empty((n + 1, d), dtype=np.int64)
    for j in range(n):
        out_t[j] = times[j]
    for j in range(n + 1):
        out_p[j] = pos[j]
    return out_t, out_p


@njit(cache=True, nogil=True)
def max_excursions(rng, d, n_walks, rate, horizon):
    """Largest |coordinate| reached by rate-``rate`` walks from the origin."""
    out = np.empty(n_walks, dtype=np.int64)
    z = np.empty(d, dtype=np.int64)
    for j in range(n_walks):
        z[:] = 0
        best = 0
        n = rng.poisson(rate * horizon)
        for _ in range(n):
            i = int(rng.random() * d)
            z[i] += 1 if rng.random() < 0.5 else -1
            if abs(z[i]) > best:
                best = abs(z[i])
        out[j] = best
    return out


@njit(cache=True, inline="always")
def _mass(x, kappa):
    # integral of (y + 1)^(-kappa) over [0, x]
    if kappa == 1.0:
        return np.log1p(x)
    return ((x + 1.0) ** (1.0 - kappa) - 1.0) / (1.0 - kappa)


@njit(cache=True, inline="always")
def _mass_inv(y, kappa):
    if kappa == 1.0:
        return np.expm1(y)
    return ((1.0 - kappa) * y + 1.0) ** (1.0 / (1.0 - kappa)) - 1.0


@njit(cache=True, nogil=True)
def time_pair_draws(rng, n, d, t1, t2, kappa, positions):
    """Importance-sampled time pairs for a double time integral of
    Cov(eta_a(0), eta_b(0)) over [0, t1] x [0, t2], with their dual pairs.

    ``a`` is uniform on [0, t1]; given ``a``, ``b`` has density proportional
    to (|b - a| + 1)^(-kappa) on [0, t2], sampled by exact inversion.  The
    weight is 1 / joint density.  The dual step: Z is the displacement of a
    walk over |b - a|, then a coalescing pair starts from (0, Z) and runs for
    min(a, b).
    """
    weight = np.empty(n)
    xs = np.zeros((n, d), dtype=np.int64)
    zs = np.empty((n, d), dtype=np.int64)
    dur = np.empty(n)
    for j in range(n):
        a = rng.random() * t1
        left = _mass(a, kappa)
        right = _mass(t2 - a, kappa)
        v = rng.random() * (left + right)
        if v < left:
            gap = _mass_inv(v, kappa)
            if gap > a:
                gap = a
        else:
            gap = _mass_inv(v - left, kappa)
            if gap > t2 - a:
                gap = t2 - a
        weight[j] = t1 * (left + right) * (gap + 1.0) ** kappa
        for i in range(d):
            zs[j, i] = 0
        _skellam_step(rng, zs[j], gap)
        # the earlier of the two times is a - gap (b on the left) or a
        dur[j] = a - gap if v < left else a
    coalesced, tau, end_p, end_s, end_f = coalescing_pairs(rng, xs, zs, dur, positions)
    return weight, coalesced, end_p, end_f
