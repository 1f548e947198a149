"""Monte Carlo estimation: tail curves, exponent fits, duality, probes.

Replication r of an ensemble uses master seed XOR r, so estimates are
independent of worker count and execution order; survival curves are read
from a single censored parking time per replication, which makes them
exactly (not just statistically) nonincreasing along the grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import TruncationError, count_visits, run_outcome
from .realization import (
    MASK64,
    SALT_WALK,
    ModelParams,
    RealizationSource,
    Torus,
    TruncatedBox,
    chain_np,
    mix64,
    mix64_np,
)


class EnsembleError(ValueError):
    pass


class FitInfeasibleError(RuntimeError):
    pass


def p0_threshold(d: int) -> float:
    """Density below which the tail union bound machinery is available."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if d == 1:
        return 0.5
    return 0.5 * (1.0 - math.sqrt(1.0 - (d * math.e) ** -2))


@dataclass
class TailCurve:
    """Estimated survival probabilities on a grid of horizons."""

    kind: str  # "tau" or "sigma"
    t_grid: tuple[int, ...]
    survival_hat: np.ndarray
    stderr: np.ndarray
    reps: int
    censored_at: int
    params: ModelParams | None = None

    def usable_mask(self) -> np.ndarray:
        lo = 10.0 / self.reps
        t = np.asarray(self.t_grid)
        return (self.survival_hat > lo) & (self.survival_hat < 0.5) & (t >= 1)


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    r_squared: float
    fit_window: tuple[int, int]
    n_points: int


def _censored_values(kind: str, d: int, p: float, seed: int, reps: int, t_max: int) -> np.ndarray:
    """Per-replication censored tau or sigma, exact through t_max."""
    if d in (1, 2):
        from .engine_fast import tail_values

        return tail_values(d, p, seed, reps, t_max, sigma=(kind == "sigma"))
    out = np.empty(reps, np.int32)
    for r in range(reps):
        src = RealizationSource(
            ModelParams(d=d, p=p, seed=(seed ^ r) & MASK64, domain=TruncatedBox(2 * t_max))
        )
        o = run_outcome(src, t_max)
        out[r] = o.sigma_censored if kind == "sigma" else o.tau_censored
    return out


def _curve_from_values(kind, t_grid, values, reps, t_max, params) -> TailCurve:
    grid = tuple(sorted(set(int(t) for t in t_grid)))
    surv = np.array([(values > t).mean() for t in grid])
    stderr = np.sqrt(surv * (1.0 - surv) / reps)
    return TailCurve(
        kind=kind,
        t_grid=grid,
        survival_hat=surv,
        stderr=stderr,
        reps=reps,
        censored_at=t_max,
        params=params,
    )


def tail_curve_tau(params: ModelParams, t_grid, reps: int, seed: int | None = None) -> TailCurve:
    """Survival curve of the origin car's parking time.

    One run per replication, read at every grid point; requires a
    truncated box of radius >= 2 * max(t_grid) so the censored values are
    exact (the staged kernels are provably equivalent to that box).
    """
    if reps < 100:
        raise EnsembleError("fewer than 100 replications gives meaningless intervals")
    if not isinstance(params.domain, TruncatedBox):
        raise EnsembleError("tail curves are defined on a truncated box domain")
    t_max = int(max(t_grid))
    if params.domain.radius < 2 * t_max:
        raise TruncationError(
            f"box radius {params.domain.radius} < 2*max(t_grid) = {2 * t_max}"
        )
    if params.p >= 0.5:
        warnings.warn("p >= 1/2: parking-time tails lose their subcritical meaning")
    master = params.seed if seed is None else seed
    values = _censored_values("tau", params.d, params.p, master, reps, t_max)
    return _curve_from_values("tau", t_grid, values, reps, t_max, params)


def fit_exponent(curve: TailCurve) -> ExponentFit:
    """Least-squares slope of log(-log survival) against log t.

    Grid points with survival >= 0.5 (saturation) or <= 10/reps (fewer
    than ten surviving replications; the transformed variance explodes)
    are discarded; at least five must remain.
    """
    mask = curve.usable_mask()
    if int(mask.sum()) < 5:
        raise FitInfeasibleError(
            f"only {int(mask.sum())} usable grid points (need >= 5): "
            "all others censored or saturated"
        )
    t = np.asarray(curve.t_grid, dtype=float)[mask]
    q = curve.survival_hat[mask]
    x = np.log(t)
    y = np.log(-np.log(q))
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        fit_window=(int(t.min()), int(t.max())),
        n_points=int(mask.sum()),
    )


@dataclass
class DualityReport:
    """Same-ensemble comparison of E V_t with sum_{s<=t} P(tau >= s)."""

    t: int
    reps: int
    ev_hat: float
    tail_sum: float
    diff: float
    paired_se: float
    z: float
    p_hat: float  # fraction of replications with tau >= 1 == car at origin
    ev_stderr: float


def duality_check(params: ModelParams, t: int, reps: int, seed: int | None = None) -> DualityReport:
    """Verify E V_t = sum_{s=1}^t P(tau >= s) on a torus ensemble.

    Both sides are computed from the same replications, so the z-score
    uses the paired per-replication differences V_t - min(tau, t).
    """
    if not isinstance(params.domain, Torus):
        raise EnsembleError("the visit identity needs a translation-invariant (torus) domain")
    if reps < 100:
        raise EnsembleError("fewer than 100 replications gives meaningless intervals")
    if t < 0:
        raise ValueError("t must be >= 0")
    master = params.seed if seed is None else seed
    if params.d in (1, 2):
        from .engine_fast import torus_outcomes

        taus, _, visits = torus_outcomes(params.d, params.p, master, reps, t, params.domain.side)
    else:
        taus = np.empty(reps, np.int32)
        visits = np.empty(reps, np.int64)
        for r in range(reps):
            src = RealizationSource(
                ModelParams(params.d, params.p, (master ^ r) & MASK64, params.domain)
            )
            taus[r] = run_outcome(src, t).tau_censored
            visits[r] = count_visits(src, t)
    clipped = np.minimum(taus, t)
    diffs = visits.astype(float) - clipped
    ev = float(visits.mean())
    tail_sum = float(clipped.mean())
    se = float(diffs.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    z = float(diffs.mean() / se) if se > 0 else 0.0
    return DualityReport(
        t=t,
        reps=reps,
        ev_hat=ev,
        tail_sum=tail_sum,
        diff=ev - tail_sum,
        paired_se=se,
        z=z,
        p_hat=float((taus >= 1).mean()),
        ev_stderr=float(visits.std(ddof=1) / math.sqrt(reps)),
    )


@dataclass
class TotalVisitsEstimate:
    value: float
    stderr: float
    t_max: int
    reps: int
    survival_at_horizon: float
    tail_bound: float
    tail_negligible: bool


def total_visits_estimate(params: ModelParams, reps: int, t_max: int,
                          seed: int | None = None) -> TotalVisitsEstimate:
    """Estimate E V (all-time visits to the origin) by truncation at t_max.

    The neglected tail sum_{s > t_max} P(tau >= s) is bounded through the
    visit identity by extrapolating a stretched-exponential fit of the
    measured survival curve; if the horizon survival exceeds 10/reps the
    estimate is flagged as not tail-negligible.
    """
    if reps < 100:
        raise EnsembleError("fewer than 100 replications gives meaningless intervals")
    if not isinstance(params.domain, TruncatedBox) or params.domain.radius < 2 * t_max:
        raise EnsembleError("needs a truncated box of radius >= 2 * t_max")
    master = params.seed if seed is None else seed
    if params.d in (1, 2):
        from .engine_fast import box_outcomes

        taus, _, visits = box_outcomes(
            params.d, params.p, master, reps, t_max, params.domain.radius,
            want_visits=True, early=False,
        )
    else:
        taus = np.empty(reps, np.int32)
        visits = np.empty(reps, np.int64)
        for r in range(reps):
            src = RealizationSource(
                ModelParams(params.d, params.p, (master ^ r) & MASK64, params.domain)
            )
            taus[r] = run_outcome(src, t_max).tau_censored
            visits[r] = count_visits(src, t_max)

    grid = [t for t in {0, 1, 2} | {2**k for k in range(1, 32)} if t <= t_max] + [t_max]
    curve = _curve_from_values("tau", grid, taus, reps, t_max, params)
    q_end = float(curve.survival_hat[-1])
    negligible = q_end <= 10.0 / reps
    if q_end <= 0.0:
        tail = 0.0
    else:
        try:
            f = fit_exponent(curve)
            rate = math.exp(f.intercept)
            tail, s = 0.0, t_max + 1
            while True:
                term = math.exp(-rate * s**f.slope)
                tail += term
                s += 1
                if term < 1e-12 * max(tail, 1e-300) or s > t_max + 10_000_000:
                    break
        except FitInfeasibleError:
            # too few usable points for a shape fit; scale the horizon
            # survival by a geometric heuristic with ratio q(t)/q(t/2)
            half = float((taus > t_max // 2).mean())
            ratio = q_end / half if half > 0 else 0.5
            ratio = min(max(ratio, 1e-9), 0.999)
            tail = q_end * ratio / (1.0 - ratio)
    return TotalVisitsEstimate(
        value=float(visits.mean()),
        stderr=float(visits.std(ddof=1) / math.sqrt(reps)),
        t_max=t_max,
        reps=reps,
        survival_at_horizon=q_end,
        tail_bound=float(tail),
        tail_negligible=negligible,
    )


@dataclass
class ProbeResult:
    """A lower-bound event probe: all-cars box + confined origin walk."""

    m: int
    t: int
    reps: int
    probe_hat: float
    all_cars_hat: float
    confined_hat: float
    joint_factored: float
    tau_survival_hat: float
    implication_violations: int


def lower_bound_probe(p: float, d: int, t: int, reps: int, seed: int = 0) -> ProbeResult:
    """Estimate P(all sites of [-M, M]^d are cars, origin walk confined).

    M = floor(t^(1/(d+2))).  On the event, the origin car sees only
    car-origin sites through time t, so the parking time exceeds t
    realization by realization; the probe is a certified lower bound for
    the tau tail measured on the same seeds.
    """
    if p <= 0:
        raise ValueError("p must be positive for the probe to have mass")
    m = int(math.floor(t ** (1.0 / (d + 2))))
    seeds = (np.uint64(seed) ^ np.arange(reps, dtype=np.uint64)).astype(np.uint64)

    from .realization import SALT_LABEL, car_threshold

    thr, all_cars_flag = car_threshold(p)
    h_label = mix64_np(seeds ^ np.uint64(SALT_LABEL))
    all_cars = np.ones(reps, dtype=bool)
    if not all_cars_flag:
        for v in _box_coords(d, m):
            h = h_label
            for c in v:
                h = chain_np(h, np.full(reps, c, dtype=np.int64))
            all_cars &= h < np.uint64(thr)

    h_walk = mix64_np(seeds ^ np.uint64(SALT_WALK))
    base = h_walk
    for _ in range(d):
        base = chain_np(base, np.zeros(reps, dtype=np.int64))
    pos = np.zeros((reps, d), dtype=np.int64)
    confined = np.ones(reps, dtype=bool)
    for k in range(1, t + 1):
        r = chain_np(base, np.full(reps, k, dtype=np.int64)) % np.uint64(2 * d)
        axis = (r >> np.uint64(1)).astype(np.int64)
        sign = 1 - 2 * (r & np.uint64(1)).astype(np.int64)
        for a in range(d):
            pos[:, a] += np.where(axis == a, sign, 0)
        confined &= (np.abs(pos) <= m).all(axis=1)

    joint = all_cars & confined
    if d in (1, 2):
        from .engine_fast import tail_values

        taus = tail_values(d, p, seed, reps, t)
    else:
        taus = _censored_values("tau", d, p, seed, reps, t)
    tau_alive = taus > t
    violations = int((joint & ~tau_alive).sum())
    return ProbeResult(
        m=m,
        t=t,
        reps=reps,
        probe_hat=float(joint.mean()),
        all_cars_hat=float(all_cars.mean()),
        confined_hat=float(confined.mean()),
        joint_factored=float(all_cars.mean() * confined.mean()),
        tau_survival_hat=float(tau_alive.mean()),
        implication_violations=violations,
    )


def _box_coords(d: int, m: int):
    rng = range(-m, m + 1)
    if d == 1:
        return [(x,) for x in rng]
    return [(x, *rest) for x in rng for rest in _box_coords(d - 1, m)]


def lower_bound_probe_curve(p: float, d: int, t_grid, reps: int, seed: int = 0) -> dict[int, float]:
    """Probe estimates for every horizon in t_grid from one walk pass.

    Confinement through t is a prefix event and M(t) is nondecreasing, so
    a single sweep up to max(t_grid) serves every grid point.
    """
    if p <= 0:
        raise ValueError("p must be positive for the probe to have mass")
    grid = sorted(set(int(t) for t in t_grid))
    t_max = grid[-1]
    m_of = {t: int(math.floor(t ** (1.0 / (d + 2)))) for t in grid}
    m_max = m_of[t_max]
    seeds = (np.uint64(seed) ^ np.arange(reps, dtype=np.uint64)).astype(np.uint64)

    from .realization import SALT_LABEL, car_threshold

    thr, all_flag = car_threshold(p)
    h_label = mix64_np(seeds ^ np.uint64(SALT_LABEL))
    # cars_within[r, k]: all sites of [-k, k]^d are cars, k = 0..m_max
    car_site = {}
    for v in _box_coords(d, m_max):
        if all_flag:
            car_site[v] = np.ones(reps, dtype=bool)
            continue
        h = h_label
        for c in v:
            h = chain_np(h, np.full(reps, c, dtype=np.int64))
        car_site[v] = h < np.uint64(thr)
    cars_within = {}
    acc = np.ones(reps, dtype=bool)
    for k in range(m_max + 1):
        for v in _box_coords(d, m_max):
            if max(abs(c) for c in v) == k:
                acc &= car_site[v]
        cars_within[k] = acc.copy()

    h_walk = mix64_np(seeds ^ np.uint64(SALT_WALK))
    base = h_walk
    for _ in range(d):
        base = chain_np(base, np.zeros(reps, dtype=np.int64))
    pos = np.zeros((reps, d), dtype=np.int64)
    # confinement through t == (running sup-norm maximum through t) <= M(t),
    # so one running max serves every grid point
    run_max = np.zeros(reps, dtype=np.int64)
    live = sorted(grid)
    out = {}
    step_k = np.empty(reps, dtype=np.int64)
    for k in range(1, t_max + 1):
        step_k.fill(k)
        r = chain_np(base, step_k) % np.uint64(2 * d)
        axis = (r >> np.uint64(1)).astype(np.int64)
        sign = 1 - 2 * (r & np.uint64(1)).astype(np.int64)
        for a in range(d):
            pos[:, a] += np.where(axis == a, sign, 0)
        np.maximum(run_max, np.abs(pos).max(axis=1), out=run_max)
        while live and live[0] == k:
            t = live.pop(0)
            out[t] = float((cars_within[m_of[t]] & (run_max <= m_of[t])).mean())
    for t in grid:
        if t not in out:  # t == 0: no steps taken, trivially confined
            out[t] = float(cars_within[m_of[t]].mean())
    return out
