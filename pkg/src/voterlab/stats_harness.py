"""Experiment configuration, statistical checks and report emission.

A run is described by an :class:`ExperimentConfig`.  ``run_experiment``
executes the checks it names, writes CSV data, the limit-law table and a JSON
report into ``output_dir/<config hash>/``, and returns the report.  Every
report record carries the analytic target with its error bound and the
estimate with its standard error; pass/fail widens the tolerance by both.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import __version__
from . import dual_engine as de
from . import forward_sim as fs
from . import lattice_rw as lr
from . import limit_laws as ll
from .rho_profile import RhoProfile, constant, heat_value, mean_occupancy
from .rng import fnv1a_64

ENGINES = ("forward", "dual", "both")


class ResourceBudgetExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    d: int = 3
    N_list: list = field(default_factory=lambda: [100, 1000, 10000])
    T: float = 1.0
    time_grid: list = field(default_factory=lambda: [0.0, 1.0])
    profile: RhoProfile = field(default_factory=lambda: constant(0.5))
    engine: str = "dual"
    replicas: int = 300
    samples: int = 200_000
    seed: int = 0
    wrap_tol: float = 1e-3
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "runs"
    checks: list | None = None
    params: dict = field(default_factory=dict)
    event_budget: float = 1e12

    def __post_init__(self):
        if isinstance(self.profile, dict):
            self.profile = RhoProfile.from_spec(self.profile)
        self.N_list = [float(n) for n in self.N_list]
        self.time_grid = [float(t) for t in self.time_grid]
        if self.d < 1:
            raise ValueError("d must be positive")
        if not self.N_list or any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError("N_list must be nonempty and increasing")
        if any(n < 1 for n in self.N_list):
            raise ValueError("every N must be >= 1")
        if self.T < 0 or any(t < 0 or t > self.T for t in self.time_grid):
            raise ValueError("time_grid must lie in [0, T]")
        if any(b <= a for a, b in zip(self.time_grid, self.time_grid[1:])):
            raise ValueError("time_grid must be increasing")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.replicas < 2:
            raise ValueError("replicas must be >= 2")
        if not 0 < self.wrap_tol < 1:
            raise ValueError("wrap_tol must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        unknown = set(self.active_checks) - set(CHECKS)
        if unknown:
            raise ValueError(f"unknown checks {sorted(unknown)}")
        if self.d < 3 and set(self.active_checks) & _THEOREM_CHECKS:
            raise ValueError("limit-theorem checks need d >= 3")

    @property
    def active_checks(self) -> list[str]:
        if self.checks is not None:
            return list(self.checks)
        return {"dual": ["occupation_grid"], "forward": ["forward_grid"],
                "both": ["cross_engine"]}[self.engine]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["profile"] = self.profile.to_spec()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        """64-bit FNV-1a of the canonical JSON form, ignoring output_dir."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return f"{fnv1a_64(blob.encode()):016x}"

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))


# ---------------------------------------------------------------- records

@dataclass
class CheckRecord:
    name: str
    passed: bool
    target: dict
    estimate: dict
    N: list = field(default_factory=list)
    status: str = ""
    p_value: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        if not self.status:
            self.status = "pass" if self.passed else "fail"
        for key in ("value", "error_bound", "provenance"):
            if key not in self.target:
                raise ValueError(f"target of {self.name} lacks {key}")
        for key in ("value", "std_error", "op", "samples"):
            if key not in self.estimate:
                raise ValueError(f"estimate of {self.name} lacks {key}")

    def line(self) -> str:
        tv, ev = self.target["value"], self.estimate["value"]
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name}: "
                f"estimate={_fmt(ev)} +- {_fmt(self.estimate['std_error'])}  "
                f"target={_fmt(tv)} +- {_fmt(self.target['error_bound'])}")


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if v is None:
        return "-"
    return f"{v:.6g}" if isinstance(v, (float, int, np.floating)) else str(v)


def _target(value, error, provenance: str) -> dict:
    return {"value": _jsonable(value), "error_bound": _jsonable(error), "provenance": provenance}


def _estimate(value, se, op: str, samples) -> dict:
    return {"value": _jsonable(value), "std_error": _jsonable(se), "op": op,
            "samples": _jsonable(samples)}


def _jsonable(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


@dataclass
class VerificationReport:
    records: list[CheckRecord]
    provenance: dict
    resources: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def to_json(self) -> dict:
        return {"passed": self.passed, "provenance": self.provenance,
                "resources": self.resources, "records": [asdict(r) for r in self.records]}

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(_jsonable_tree(self.to_json()), indent=2) + "\n")
        return path


def _jsonable_tree(obj):
    if isinstance(obj, dict):
        return {k: _jsonable_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable_tree(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ---------------------------------------------------------------- tests

def ks_gaussian_test(samples, variance: float) -> tuple[float, float]:
    """One-sample KS statistic against N(0, variance) and its asymptotic p-value."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 50:
        raise ValueError("need at least 50 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if not variance > 0 or not math.isfinite(variance):
        raise ValueError("variance must be positive")
    res = stats.kstest(x, "norm", args=(0.0, math.sqrt(variance)), method="asymp")
    return float(res.statistic), float(res.pvalue)


@dataclass(frozen=True)
class TrendResult:
    passed: bool
    distances: list
    reason: str


def trend_check(values: Sequence[tuple[float, float, float]], target, tol: float,
                target_error=0.0) -> TrendResult:
    """Convergence along increasing N toward ``target``.

    ``values`` holds (N, estimate, std_error).  The distance to the target may
    not grow from one N to the next by more than 3 combined standard errors,
    and the last distance must be within ``tol`` + 3 std_error + target error.
    ``target`` and ``target_error`` may be per-N sequences.
    """
    if len(values) < 3:
        raise ValueError("trend_check needs at least 3 points")
    Ns = [v[0] for v in values]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("N must increase")
    n = len(values)
    tg = list(target) if isinstance(target, (list, tuple, np.ndarray)) else [target] * n
    te = (list(target_error) if isinstance(target_error, (list, tuple, np.ndarray))
          else [target_error] * n)
    if len(tg) != n or len(te) != n:
        raise ValueError("per-N targets must match the number of points")
    dist = [abs(v[1] - t) for v, t in zip(values, tg)]
    se = [v[2] for v in values]
    for k in range(n - 1):
        slack = 3 * math.hypot(se[k], se[k + 1]) + te[k] + te[k + 1]
        if dist[k + 1] > dist[k] + slack:
            return TrendResult(False, dist, f"distance grows between N={Ns[k]:g} and N={Ns[k + 1]:g}")
    if dist[-1] > tol + 3 * se[-1] + te[-1]:
        return TrendResult(False, dist, f"final distance {dist[-1]:.4g} exceeds tolerance")
    return TrendResult(True, dist, "ok")


# ---------------------------------------------------------------- context

@dataclass
class _Context:
    config: ExperimentConfig
    threads: int
    estimate_rows: list = field(default_factory=list)
    path_rows: list = field(default_factory=list)
    predicted_events: float = 0.0
    actual_events: int = 0
    log: Callable[[str], None] = lambda msg: None


_REPLICA_CACHE: dict = {}


def _forward_runs(cfg: ExperimentConfig, ctx: _Context, N: float, side: int, watched):
    key = (cfg.profile, cfg.d, N, cfg.T, side, cfg.replicas, cfg.seed, tuple(watched))
    if key not in _REPLICA_CACHE:
        ctx.log(f"forward: {cfg.replicas} replicas, d={cfg.d}, N={N:g}, L={side}")
        _REPLICA_CACHE.clear()
        _REPLICA_CACHE[key] = fs.run_replicas(cfg.profile, cfg.d, N, cfg.T, side, cfg.replicas,
                                              cfg.seed, watched, ctx.threads)
    runs = _REPLICA_CACHE[key]
    ctx.actual_events += sum(r.events for r in runs)
    return runs


def _series(ctx, op, N_list, fn, params):
    cfg = ctx.config
    out = []
    for N in N_list:
        est = fn(N)
        ctx.log(f"{op}: N={N:g} -> {est.value:.6g} +- {est.std_error:.2g}")
        ctx.estimate_rows.append(de.estimate_row(op, cfg.d, N, cfg.profile, params, est, cfg.seed))
        out.append((N, est))
    return out


def _trend_record(name, series, target, target_err, tol, op, provenance) -> CheckRecord:
    vals = [(N, e.value, e.std_error) for N, e in series]
    res = trend_check(vals, target, tol, target_err)
    tg = target if isinstance(target, list) else [target] * len(vals)
    return CheckRecord(
        name, res.passed,
        _target(tg, target_err, provenance),
        _estimate([v[1] for v in vals], [v[2] for v in vals], op, [e.samples for _, e in series]),
        N=[v[0] for v in vals], status="trend:" + ("pass" if res.passed else "fail"),
        details={"distances": res.distances, "tolerance": tol, "reason": res.reason})


# ---------------------------------------------------------------- checks

def _e1(d: int) -> np.ndarray:
    e = np.zeros(d, dtype=np.int64)
    e[0] = 1
    return e


def check_pair_limit(ctx: _Context) -> list[CheckRecord]:
    """E(eta(y) - eta(x))^2 at time sN for neighbours x, y = x + e1 versus
    2 gamma_d heat(s, x / sqrt N)(1 - heat(s, x / sqrt N)); x = round(c sqrt N) e1
    for each shift c in params["shifts"]."""
    cfg = ctx.config
    s = float(cfg.params.get("s", 1.0))
    g = lr.gamma(cfg.d)
    rel = cfg.tol("rel", 0.02)
    out = []
    for shift in cfg.params.get("shifts", [0.0]):
        def sites(N):
            x = _e1(cfg.d) * int(round(shift * math.sqrt(N)))
            return x, x + _e1(cfg.d)

        targets, errs = [], []
        for N in cfg.N_list:
            x, _ = sites(N)
            r = heat_value(cfg.profile, s, x / math.sqrt(N))
            targets.append(2 * g.value * r * (1 - r))
            errs.append(2 * g.error * r * (1 - r) + 2 * g.value * 1e-8)
        series = _series(ctx, "pair_sq_diff", cfg.N_list,
                         lambda N: de.pair_sq_diff(cfg.profile, *sites(N), s, N, cfg.samples,
                                                   cfg.seed, ctx.threads),
                         {"s": s, "shift": shift})
        name = f"pair_limit[{cfg.profile.profile_id}, d={cfg.d}, s={s:g}, shift={shift:g}]"
        out.append(_trend_record(name, series, targets, errs, rel * abs(targets[-1]),
                                 "dual_engine.pair_sq_diff",
                                 "2*gamma_d*heat*(1-heat) via lattice_rw.gamma + rho_profile.heat_value"))
    return out


def _occupation_target(profile, d, t1, t2) -> tuple[float, float, str]:
    if d >= 4:
        v = ll.ito_variance(profile, min(t1, t2), d, with_error=True)
        return v.value, v.error, "limit_laws.ito_variance"
    if d == 3:
        g = lr.gamma(3)
        z = ll.zeta_cov(profile, t1, t2, with_error=True)
        return 12 * g.value * z.value, 12 * (g.error * z.value + g.value * z.error), \
            "12*gamma_3*limit_laws.zeta_cov"
    raise ValueError("occupation-time limits are checked for d >= 3")


def _occupation_series(ctx, t1, t2):
    cfg = ctx.config
    return _series(ctx, "occupation_cov", cfg.N_list,
                   lambda N: de.occupation_cov(cfg.profile, t1, t2, cfg.d, N, cfg.samples,
                                               cfg.seed, ctx.threads),
                   {"t1": t1, "t2": t2})


def check_occupation(ctx: _Context) -> list[CheckRecord]:
    """Cov(xi_{t1 N}, xi_{t2 N}) / h_d(N)^2 against the limit covariance."""
    cfg = ctx.config
    t1, t2 = float(cfg.params.get("t1", cfg.T)), float(cfg.params.get("t2", cfg.T))
    target, err, prov = _occupation_target(cfg.profile, cfg.d, t1, t2)
    series = _occupation_series(ctx, t1, t2)
    rel = cfg.tol("rel", 0.10)
    name = f"occupation_cov[{cfg.profile.profile_id}, d={cfg.d}, t1={t1:g}, t2={t2:g}]"
    out = [_trend_record(name, series, target, err, rel * abs(target),
                         "dual_engine.occupation_cov", prov)]
    if cfg.params.get("cross_check") and cfg.d == 3 and cfg.profile.is_constant:
        p = cfg.profile.params[0]
        for t in sorted({t1, t2}):
            z = ll.zeta_cov(cfg.profile, t, t, with_error=True)
            closed = ll.zeta_closed_form_var(p, t)
            out.append(CheckRecord(
                f"zeta_var_closed_form[t={t:g}]", abs(z.value - closed) <= 1e-4 * closed,
                _target(closed, 0.0, "p(1-p)(4 pi)^(-3/2)(8-4 sqrt 2)(2/3)t^(3/2)"),
                _estimate(z.value, z.error, "limit_laws.zeta_cov", 0),
                details={"relative_error": abs(z.value / closed - 1), "tolerance": 1e-4}))
        # Monte Carlo variance at t2 against the closed form, largest N only
        N = cfg.N_list[-1]
        est = de.occupation_cov(cfg.profile, t2, t2, 3, N, cfg.samples, cfg.seed, ctx.threads)
        ctx.estimate_rows.append(de.estimate_row("occupation_cov", 3, N, cfg.profile,
                                                 {"t1": t2, "t2": t2}, est, cfg.seed))
        g = lr.gamma(3)
        closed = 12 * g.value * ll.zeta_closed_form_var(p, t2)
        ok = abs(est.value - closed) <= rel * closed + 3 * est.std_error
        out.append(CheckRecord(
            f"occupation_var_closed_form[d=3, t={t2:g}, N={N:g}]", ok,
            _target(closed, 12 * g.error * ll.zeta_closed_form_var(p, t2),
                    "12*gamma_3*closed-form Var(zeta_t)"),
            _estimate(est.value, est.std_error, "dual_engine.occupation_cov", est.samples),
            N=[N], details={"tolerance": rel * closed}))
    return out


def check_occupation_grid(ctx: _Context) -> list[CheckRecord]:
    """Occupation variance at every grid time; t = 0 must give exactly 0."""
    cfg = ctx.config
    out = []
    for t in cfg.time_grid:
        if t == 0:
            ests = [de.occupation_cov(cfg.profile, 0.0, 0.0, cfg.d, N, cfg.samples, cfg.seed)
                    for N in cfg.N_list]
            for N, e in zip(cfg.N_list, ests):
                ctx.estimate_rows.append(de.estimate_row("occupation_cov", cfg.d, N, cfg.profile,
                                                         {"t1": 0.0, "t2": 0.0}, e, cfg.seed))
            out.append(CheckRecord(
                "occupation_cov[t=0]", all(e.value == 0 and e.std_error == 0 for e in ests),
                _target(0.0, 0.0, "empty time integral"),
                _estimate([e.value for e in ests], [e.std_error for e in ests],
                          "dual_engine.occupation_cov", [e.samples for e in ests]),
                N=list(cfg.N_list)))
            continue
        target, err, prov = _occupation_target(cfg.profile, cfg.d, t, t)
        series = _occupation_series(ctx, t, t)
        rel = cfg.tol("rel", 0.10)
        name = f"occupation_var[{cfg.profile.profile_id}, d={cfg.d}, t={t:g}]"
        if len(series) >= 3:
            out.append(_trend_record(name, series, target, err, rel * abs(target),
                                     "dual_engine.occupation_cov", prov))
        else:
            N, e = series[-1]
            ok = abs(e.value - target) <= rel * abs(target) + 3 * e.std_error + err
            out.append(CheckRecord(name, ok, _target(target, err, prov),
                                   _estimate(e.value, e.std_error, "dual_engine.occupation_cov",
                                             e.samples), N=[N]))
    return out


def _forward_setup(cfg: ExperimentConfig):
    N = cfg.N_list[0]
    side = int(cfg.params.get("side") or fs.choose_torus_side(cfg.d, N, cfg.T, cfg.wrap_tol))
    return N, side


def _mean_bit(runs, site, t):
    x = np.array([float(r.logs[site].value_at(t)) for r in runs])
    return x.mean(), x.std(ddof=1) / math.sqrt(x.size), x


def check_forward_grid(ctx: _Context) -> list[CheckRecord]:
    """Forward replicas: E[eta_t(0)] against the duality mean at grid times, and
    scaled occupation paths written to CSV."""
    cfg = ctx.config
    N, side = _forward_setup(cfg)
    origin = tuple([0] * cfg.d)
    runs = _forward_runs(cfg, ctx, N, side, [origin])
    grid = [t * N for t in cfg.time_grid]
    out = []
    for t, tm in zip(cfg.time_grid, grid):
        m, se, _ = _mean_bit(runs, origin, tm)
        target = mean_occupancy(cfg.profile, tm, np.zeros(cfg.d, np.int64), N)
        out.append(CheckRecord(
            f"forward_mean[t={t:g}, N={N:g}, L={side}]", abs(m - target) <= 3 * se + 1e-10,
            _target(target, 1e-10, "rho_profile.mean_occupancy"),
            _estimate(m, se, "forward_sim.run_voter", len(runs)), N=[N]))
    _write_paths(ctx, runs, origin, N, grid)
    return out


def _write_paths(ctx, runs, origin, N, grid):
    cfg = ctx.config
    if cfg.d < 3:
        return
    for r, run in enumerate(runs):
        path = fs.scaled_path(fs.occupation_path(run.logs[origin], cfg.T * N, cfg.profile, N,
                                                 grid), cfg.d, N)
        ctx.path_rows.extend(fs.path_rows(r, cfg.seed, path))


def check_cross_engine(ctx: _Context) -> list[CheckRecord]:
    """Forward simulation against duality on one small instance."""
    cfg = ctx.config
    N, side = _forward_setup(cfg)
    origin, e1 = tuple([0] * cfg.d), tuple(_e1(cfg.d))
    watched = [origin, e1]
    runs = _forward_runs(cfg, ctx, N, side, watched)
    s_list = [float(s) for s in cfg.params.get("s_list", [0.25, 0.5, 1.0])]
    out = []
    forward_est = {}
    # (a) one-point means
    for s in s_list:
        m, se, _ = _mean_bit(runs, origin, s * N)
        target = mean_occupancy(cfg.profile, s * N, np.zeros(cfg.d, np.int64), N)
        forward_est[f"mean[s={s:g}]"] = (m, se)
        out.append(CheckRecord(
            f"cross_engine.mean[s={s:g}, N={N:g}, L={side}]", abs(m - target) <= 3 * se + 1e-10,
            _target(target, 1e-10, "rho_profile.mean_occupancy"),
            _estimate(m, se, "forward_sim.run_voter", len(runs)), N=[N]))
    # (b) pair squared difference at the last s
    s = s_list[-1]
    a = np.array([float(r.logs[origin].value_at(s * N)) for r in runs])
    b = np.array([float(r.logs[e1].value_at(s * N)) for r in runs])
    sq = (a - b) ** 2
    fm, fse = sq.mean(), sq.std(ddof=1) / math.sqrt(sq.size)
    forward_est[f"pair[s={s:g}]"] = (fm, fse)
    dual = de.pair_sq_diff(cfg.profile, origin, e1, s, N, int(cfg.params.get("pair_samples", cfg.samples)),
                           cfg.seed, ctx.threads)
    ctx.estimate_rows.append(de.estimate_row("pair_sq_diff", cfg.d, N, cfg.profile, {"s": s},
                                             dual, cfg.seed))
    out.append(CheckRecord(
        f"cross_engine.pair_sq_diff[s={s:g}, N={N:g}, L={side}]",
        abs(fm - dual.value) <= 3 * math.hypot(fse, dual.std_error),
        _target(dual.value, dual.std_error, "dual_engine.pair_sq_diff"),
        _estimate(fm, fse, "forward_sim.run_voter", len(runs)), N=[N]))
    # (c) doubled torus: coupled runs on L and 2L - 1 from shared edge clocks
    subset = int(cfg.params.get("coupled_replicas", 12))
    ctx.log(f"coupled doubling: {subset} replicas on L={side} and {2 * side - 1}")
    ctx.predicted_events += 0  # accounted for in the resource estimate
    diffs = {k: [] for k in forward_est}
    for r in range(subset):
        big, small = fs.coupled_replica(cfg.profile, cfg.d, N, cfg.T, side, r, cfg.seed, watched)
        ctx.actual_events += big.events
        for sv in s_list:
            diffs[f"mean[s={sv:g}]"].append(float(big.logs[origin].value_at(sv * N))
                                              - float(small.logs[origin].value_at(sv * N)))
        pb = (float(big.logs[origin].value_at(s * N)) - float(big.logs[e1].value_at(s * N))) ** 2
        ps = (float(small.logs[origin].value_at(s * N)) - float(small.logs[e1].value_at(s * N))) ** 2
        diffs[f"pair[s={s:g}]"].append(pb - ps)
    for key, (m, se) in forward_est.items():
        dv = np.array(diffs[key])
        shift = abs(dv.mean())
        dse = dv.std(ddof=1) / math.sqrt(dv.size) if dv.size > 1 else 0.0
        out.append(CheckRecord(
            f"cross_engine.doubling.{key}[L={side}->{2 * side - 1}]", shift < se,
            _target(0.0, se, "one standard error of the forward estimate"),
            _estimate(shift, dse, "forward_sim.coupled_replica", subset), N=[N],
            details={"nonzero_pairs": int(np.count_nonzero(dv)), "sigma": se}))
    return out


def check_marginal_gaussian(ctx: _Context) -> list[CheckRecord]:
    """KS tests of the scaled occupation time at T against the limit variance
    (level ks_level) and against the empirical variance (level ks_level_empirical)."""
    cfg = ctx.config
    N, side = _forward_setup(cfg)
    origin, e1 = tuple([0] * cfg.d), tuple(_e1(cfg.d))
    watched = [origin, e1] if cfg.params.get("share_cross_engine", True) else [origin]
    runs = _forward_runs(cfg, ctx, N, side, watched)
    T = cfg.T
    vals = []
    for r, run in enumerate(runs):
        path = fs.scaled_path(fs.occupation_path(run.logs[origin], T * N, cfg.profile, N,
                                                 [0.0, T * N]), cfg.d, N)
        ctx.path_rows.extend(fs.path_rows(r, cfg.seed, path))
        vals.append(path.values[-1])
    vals = np.array(vals)
    target, err, prov = _occupation_target(cfg.profile, cfg.d, T, T)
    level = cfg.tol("ks_level", 1e-3)
    stat, p = ks_gaussian_test(vals, target)
    emp = float(vals.var(ddof=1))
    level_e = cfg.tol("ks_level_empirical", 1e-2)
    stat_e, p_e = ks_gaussian_test(vals, emp)
    return [
        CheckRecord(f"marginal_gaussian.limit_variance[T={T:g}, N={N:g}]", p >= level,
                    _target(target, err, prov),
                    _estimate(emp, emp * math.sqrt(2 / (vals.size - 1)), "forward_sim.scaled_path",
                              vals.size), N=[N], p_value=p,
                    details={"ks_statistic": stat, "level": level}),
        CheckRecord(f"marginal_gaussian.empirical_variance[T={T:g}, N={N:g}]", p_e >= level_e,
                    _target(emp, 0.0, "sample variance of the replicas"),
                    _estimate(emp, emp * math.sqrt(2 / (vals.size - 1)), "forward_sim.scaled_path",
                              vals.size), N=[N], p_value=p_e,
                    details={"ks_statistic": stat_e, "level": level_e}),
    ]


def _simple(name, ok, target, terr, prov, est, se, op, samples=0, **details) -> CheckRecord:
    return CheckRecord(name, ok, _target(target, terr, prov), _estimate(est, se, op, samples),
                       details=details)


def check_property_suite(ctx: _Context) -> list[CheckRecord]:
    """Kernel and limit-object identities."""
    cfg = ctx.config
    out = []
    # kernel normalisation and semigroup
    worst_norm, worst_semi = 0.0, 0.0
    for t in (0.3, 2.0, 25.0):
        _, k1 = lr.kernel_table(t)
        worst_norm = max(worst_norm, abs(k1.sum() - 1))
        for s in (0.7, 5.0):
            r = max(lr.truncation_radius(t), lr.truncation_radius(s))
            conv = np.convolve(lr.kernel_table(t, r)[1], lr.kernel_table(s, r)[1])
            k3 = lr.kernel_table(t + s, 2 * r)[1]
            worst_semi = max(worst_semi, float(np.max(np.abs(conv - k3))))
    out.append(_simple("kernel_normalization", worst_norm <= 1e-8, 1.0, 1e-8, "probability kernel",
                       1 - worst_norm, 0.0, "lattice_rw.kernel_table", max_error=worst_norm))
    out.append(_simple("kernel_semigroup", worst_semi <= 1e-8, 0.0, 1e-8, "Chapman-Kolmogorov",
                       worst_semi, 0.0, "lattice_rw.kernel_table"))
    # gamma by two routes
    mc_samples = int(cfg.params.get("gamma_samples", 100_000))
    for d in (3, 4, 5):
        g = lr.gamma(d)
        m = lr.gamma(d, "monte_carlo", samples=mc_samples, seed=cfg.seed)
        out.append(_simple(f"gamma_green_vs_monte_carlo[d={d}]",
                           abs(g.value - m.value) <= g.error + m.error,
                           g.value, g.error, "lattice_rw.gamma(green)", m.value, m.error / 3,
                           "lattice_rw.gamma(monte_carlo)", mc_samples, half_width=m.error))
    g3 = lr.gamma(3)
    esc = 1 - lr.hit_prob(_e1(3))
    out.append(_simple("gamma_vs_hit_prob[d=3]", abs(g3.value - esc) <= 1e-6, g3.value, g3.error,
                       "lattice_rw.gamma(green)", esc, 0.0, "1 - lattice_rw.hit_prob(e1)"))
    # b kernel
    closed = ll.b_kernel(1.0, 0.25, [0.7, 0.0, 0.0])
    quad = ll.b_kernel_quad(1.0, 0.25, [0.7, 0.0, 0.0])
    out.append(_simple("b_kernel_closed_vs_quadrature", abs(closed - quad) <= 1e-8, quad, 0.0,
                       "adaptive quadrature of the defining integral", closed, 0.0,
                       "limit_laws.b_kernel"))
    # zeta closed form and PSD
    p = 0.5
    z = ll.zeta_cov(constant(p), 1.0, 1.0)
    zc = ll.zeta_closed_form_var(p, 1.0)
    out.append(_simple("zeta_cov_closed_form", abs(z / zc - 1) <= 1e-4, zc, 0.0,
                       "closed-form Var(zeta_1)", z, 0.0, "limit_laws.zeta_cov"))
    grid = [1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6, 1.0]
    for prof in (constant(p), cfg.profile):
        cov, _ = ll.zeta_cov_matrix(prof, grid)
        eig = float(np.linalg.eigvalsh(cov).min())
        out.append(_simple(f"zeta_cov_psd[{prof.profile_id}]", ll.is_psd(cov), 0.0, 1e-10,
                           "smallest eigenvalue >= -jitter", eig, 0.0, "limit_laws.zeta_cov_matrix"))
    # covariance bound Cov(eta(x), eta(y)) <= Phi(x - y) + 3 se
    worst = -np.inf
    samples = int(cfg.params.get("cov_samples", 20_000))
    ok = True
    for prof in (constant(0.5), cfg.profile):
        for y in ((1, 0, 0), (2, 0, 0), (1, 1, 0)):
            phi = lr.hit_prob(y)
            for s in (0.5, 1.0):
                for N in (25.0, 100.0):
                    e = de.pair_cov(prof, (0, 0, 0), y, s, N, samples, cfg.seed, ctx.threads)
                    margin = e.value - (phi + 3 * e.std_error)
                    worst = max(worst, margin)
                    ok &= margin <= 0
    out.append(_simple("covariance_bound", ok, 0.0, 0.0, "Cov - Phi(x-y) - 3 se <= 0",
                       worst, 0.0, "dual_engine.pair_cov", samples))
    # sum of g_N
    worst = 0.0
    for N in (10.0, 100.0):
        tot = lr.g_N_box_sum(3, N, lr.truncation_radius(50 * N))
        worst = max(worst, abs(tot.value - N * (1 - math.exp(-50.0))))
    out.append(_simple("g_N_sum_identity", worst <= 1e-6, 0.0, 1e-6, "sum over Z^d of g_N = N",
                       worst, 0.0, "lattice_rw.g_N_box_sum"))
    # d = 4: (1 / log N) sum g_N^2 -> 1 / (16 pi^2)
    target = 1 / (16 * math.pi**2)
    Ns = [1e3, 1e4, 1e5, 1e6]
    S = [lr.g_N_sq_sum(4, N).value for N in Ns]
    ratio = [s / math.log(N) for s, N in zip(S, Ns)]
    dist = [abs(r - target) for r in ratio]
    slope = (S[-1] - S[-2]) / math.log(10)
    decreasing = all(b < a for a, b in zip(dist, dist[1:]))
    out.append(_simple("d4_green_square_log_trend", decreasing and abs(slope / target - 1) <= 1e-3,
                       target, 0.0, "1/(16 pi^2)", ratio[-1], 0.0, "lattice_rw.g_N_sq_sum",
                       ratios=ratio, distances=dist, log_slope=slope))
    return out


def check_b_convergence(ctx: _Context) -> list[CheckRecord]:
    """L2 distance of b_t^N to b_t decreases strictly; pointwise values converge."""
    cfg = ctx.config
    t = float(cfg.params.get("t", cfg.T))
    dists = [ll.b_l2_distance(t, N, with_error=True) for N in cfg.N_list]
    for N, dd in zip(cfg.N_list, dists):
        ctx.log(f"b_l2_distance: N={N:g} -> {dd.value:.6g} (+- {dd.error:.1g})")
    strict = all(b.value + b.error < a.value - a.error for a, b in zip(dists, dists[1:]))
    out = [CheckRecord(f"b_l2_distance_decreasing[t={t:g}]", strict,
                       _target(0.0, 0.0, "L2 convergence of b_t^N to b_t"),
                       _estimate([d.value for d in dists], [d.error for d in dists],
                                 "limit_laws.b_l2_distance", 0), N=list(cfg.N_list))]
    s, u = float(cfg.params.get("s", 0.25)), cfg.params.get("u", [0.7, 0.0, 0.0])
    exact = ll.b_kernel(t, s, u)
    vals = [ll.b_lattice(t, s, u, N) for N in cfg.N_list]
    errs = [abs(v - exact) for v in vals]
    rel = cfg.tol("pointwise_rel", 1e-3)
    ok = errs[-1] < errs[0] and errs[-1] <= rel * exact
    out.append(CheckRecord(f"b_pointwise[t={t:g}, s={s:g}, u={u}]", ok,
                           _target(exact, 0.0, "limit_laws.b_kernel"),
                           _estimate(vals, 0.0, "sqrt(N) v(N(t-s), x_N)", 0), N=list(cfg.N_list),
                           details={"errors": errs, "tolerance": rel * exact}))
    return out


CHECKS: dict[str, Callable[[_Context], list[CheckRecord]]] = {
    "pair_limit": check_pair_limit,
    "occupation": check_occupation,
    "occupation_grid": check_occupation_grid,
    "forward_grid": check_forward_grid,
    "cross_engine": check_cross_engine,
    "marginal_gaussian": check_marginal_gaussian,
    "property_suite": check_property_suite,
    "b_convergence": check_b_convergence,
}

_FORWARD_CHECKS = {"forward_grid", "cross_engine", "marginal_gaussian"}
_THEOREM_CHECKS = {"pair_limit", "occupation", "occupation_grid", "marginal_gaussian"}


# ---------------------------------------------------------------- runner

def predicted_events(cfg: ExperimentConfig) -> float:
    """Forward-simulation events the config will need (expected counts)."""
    checks = set(cfg.active_checks)
    if not checks & _FORWARD_CHECKS:
        return 0.0
    N, side = _forward_setup(cfg)
    total = cfg.replicas * fs.predicted_events(cfg.d, side, cfg.T * N)
    if "cross_engine" in checks:
        subset = int(cfg.params.get("coupled_replicas", 12))
        total += subset * fs.predicted_events(cfg.d, 2 * side - 1, cfg.T * N)
    return total


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def run_experiment(config: ExperimentConfig, *, threads: int = 1, write: bool = True,
                   log: Callable[[str], None] | None = None) -> VerificationReport:
    """Run every check the config names; write artifacts under
    ``output_dir/<config hash>/`` unless ``write`` is false."""
    predicted = predicted_events(config)
    if predicted > config.event_budget:
        N, side = _forward_setup(config)
        raise ResourceBudgetExceeded(
            f"forward runs need about {predicted:.3g} events (torus side {side}, "
            f"{config.replicas} replicas, T*N={config.T * N:g}) but the budget is "
            f"{config.event_budget:.3g}; lower N, T or replicas, or raise event_budget")
    ctx = _Context(config, threads, predicted_events=predicted, log=log or (lambda m: None))
    records: list[CheckRecord] = []
    for name in config.active_checks:
        records.extend(CHECKS[name](ctx))
    table = None
    if config.d >= 3:
        table = ll.limit_table(config.profile, config.d, config.time_grid)
    report = VerificationReport(
        records,
        {"config_hash": config.config_hash(), "seed": config.seed, "code_version": __version__,
         "limit_table_id": table.table_id if table else None, "checks": config.active_checks},
        {"predicted_events": predicted, "actual_events": ctx.actual_events})
    if write:
        out = Path(config.output_dir) / config.config_hash()
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        if ctx.estimate_rows:
            _write_csv(out / "estimates.csv", de.CSV_FIELDS, ctx.estimate_rows)
        if ctx.path_rows:
            _write_csv(out / "paths.csv", fs.PATH_CSV_FIELDS, ctx.path_rows)
        if table is not None:
            table.write(out / "limit_table.json")
        report.write(out / "report.json")
    return report


def acceptance_configs(seed: int = 20240601, output_dir: str = "runs") -> dict[str, ExperimentConfig]:
    """The eight acceptance experiments at their stated sizes."""
    from .rho_profile import gaussian_bump, logistic_axis

    big = [100, 1000, 10000]
    small = dict(d=3, N_list=[25], T=1.0, time_grid=[0.0, 0.25, 0.5, 1.0],
                 profile=gaussian_bump(0.2, 0.5, 1.0), engine="both", replicas=300,
                 samples=200_000, seed=seed, wrap_tol=1e-3, output_dir=output_dir)
    return {
        "1": ExperimentConfig(d=3, N_list=big, profile=constant(0.5), samples=200_000, seed=seed,
                              checks=["pair_limit"], params={"s": 1.0}, tolerances={"rel": 0.02},
                              output_dir=output_dir),
        "2": ExperimentConfig(d=3, N_list=big, profile=logistic_axis(0.2, 0.8), samples=200_000,
                              seed=seed, checks=["pair_limit"],
                              params={"s": 1.0, "shifts": [0.0, 2.0]}, tolerances={"rel": 0.02},
                              output_dir=output_dir),
        "3": ExperimentConfig(d=5, N_list=big, profile=constant(0.5), samples=200_000, seed=seed,
                              checks=["occupation"], params={"t1": 1.0, "t2": 1.0},
                              tolerances={"rel": 0.10}, output_dir=output_dir),
        "4": ExperimentConfig(d=3, N_list=big, profile=constant(0.5), samples=500_000, seed=seed,
                              checks=["occupation"],
                              params={"t1": 0.5, "t2": 1.0, "cross_check": True},
                              tolerances={"rel": 0.10}, output_dir=output_dir),
        "5": ExperimentConfig(**small, checks=["cross_engine"],
                              params={"s_list": [0.25, 0.5, 1.0], "coupled_replicas": 12}),
        "6": ExperimentConfig(**small, checks=["marginal_gaussian"],
                              tolerances={"ks_level": 1e-3, "ks_level_empirical": 1e-2}),
        "7": ExperimentConfig(d=3, N_list=[25], profile=logistic_axis(0.2, 0.8), seed=seed,
                              checks=["property_suite"], output_dir=output_dir),
        "8": ExperimentConfig(d=3, N_list=big, T=1.0, seed=seed, checks=["b_convergence"],
                              params={"t": 1.0, "s": 0.25, "u": [0.7, 0.0, 0.0]},
                              tolerances={"pointwise_rel": 1e-3}, output_dir=output_dir),
    }
