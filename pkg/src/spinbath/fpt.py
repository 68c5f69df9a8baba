"""First-passage times of y_t = 2 rho_t - 1, survival probes and renewal composition.

tau(y) is the first time y_t exceeds the level y, starting from U0 = 1 (y = -1).
Ensembles stop each path as soon as every requested level has been reached, so
the horizon t_final only matters for censored paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy import integrate
from scipy.special import erf, erfcx

from .dynamics import SimParams, Trajectory, _map_paths, exit_time, passage_times, relaxation_time, state_from_y
from .noise import STATE_STREAM, NoiseParams, ou_transition, path_rng, sample_stationary

MIN_PATHS = 100
HORIZON_FACTOR = 20.0
MAX_CENSORED = 0.10
TAIL_MIN_SURVIVORS = 10


@dataclass(frozen=True)
class DomainSpec:
    y_low: float
    y_high: float
    z_bound: float

    def __post_init__(self):
        if not (-1.0 <= self.y_low < self.y_high <= 1.0):
            raise ValueError("need -1 <= y_low < y_high <= 1")
        if not self.z_bound > 0:
            raise ValueError("z_bound must be > 0")


@dataclass
class TailFit:
    rate: float
    intercept: float
    r_squared: float
    n_points: int


@dataclass
class FptResult:
    y_level: float
    samples: np.ndarray  # passage times; censored entries hold the horizon
    censored: np.ndarray  # bool
    mean: float
    se: float
    tail: TailFit | None
    tstar: float
    q_of_T: float | None = None
    probe_T: float | None = None

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.censored))

    @property
    def mean_is_lower_bound(self) -> bool:
        return self.censored_fraction > MAX_CENSORED

    @property
    def tail_rate(self) -> float:
        return self.tail.rate if self.tail is not None else float("nan")

    @property
    def e_level(self) -> float:
        """Measured E[tau] / T*."""
        return self.mean / self.tstar


def first_passage(traj: Trajectory, y_level: float):
    """(tau, censored) on the stored grid, linearly interpolated between grid points."""
    y = traj.y
    if y[0] >= y_level:
        return 0.0, False
    above = np.flatnonzero(y > y_level)
    if len(above) == 0:
        return float(traj.times[-1]), True
    j = above[0]
    t0, t1 = traj.times[j - 1], traj.times[j]
    frac = (y_level - y[j - 1]) / (y[j] - y[j - 1])
    return float(t0 + frac * (t1 - t0)), False


def survival_curve(samples, censored):
    """Kaplan-Meier-free empirical survival: P(tau > t) at each sorted uncensored time.

    Censoring only happens at the common horizon, so the plain empirical
    survival function is exact for all t below it.
    """
    samples = np.asarray(samples, dtype=float)
    censored = np.asarray(censored, dtype=bool)
    t = np.sort(samples[~censored])
    n = len(samples)
    surv = 1.0 - np.arange(1, len(t) + 1) / n
    return t, surv


def tail_fit(samples, censored, min_survivors: int = TAIL_MIN_SURVIVORS) -> TailFit | None:
    """Fit log P(tau > t) = c - rate t over the upper half of the sample."""
    t, surv = survival_curve(samples, censored)
    n = len(samples)
    keep = (t >= np.median(samples)) & (surv * n >= min_survivors)
    if keep.sum() < 3:
        return None
    x, ly = t[keep], np.log(surv[keep])
    slope, intercept = np.polyfit(x, ly, 1)
    resid = ly - (slope * x + intercept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 0.0
    return TailFit(rate=float(-slope), intercept=float(intercept), r_squared=float(r2), n_points=int(keep.sum()))


def _summarise(level, taus, horizon, tstar, probe_T=None) -> FptResult:
    cens = np.isnan(taus)
    samples = np.where(cens, horizon, taus)
    ok = samples[~cens]
    if cens.mean() > MAX_CENSORED:
        # the censored values enter at the horizon, making this a lower bound
        mean = float(samples.mean())
        se = float(samples.std(ddof=1) / np.sqrt(len(samples)))
    else:
        mean = float(ok.mean()) if len(ok) else float("nan")
        se = float(ok.std(ddof=1) / np.sqrt(len(ok))) if len(ok) > 1 else float("nan")
    q = float(np.mean(samples > probe_T)) if probe_T is not None else None
    return FptResult(level, samples, cens, mean, se, tail_fit(samples, cens), tstar, q, probe_T)


def fpt_ensemble(params: SimParams, y_levels, n_paths: int, probe_T: float | None = None, workers=None, check_horizon: bool = True):
    """First-passage statistics from U0 = 1 for one or several levels.

    Returns a single :class:`FptResult` for a scalar level and a list otherwise.
    """
    scalar = np.ndim(y_levels) == 0
    levels = np.atleast_1d(np.asarray(y_levels, dtype=float))
    if n_paths < MIN_PATHS:
        raise ValueError(f"n_paths must be >= {MIN_PATHS}")
    tstar = params.tstar
    if check_horizon and not params.t_final >= HORIZON_FACTOR * tstar:
        raise ValueError(f"t_final must be >= {HORIZON_FACTOR:g} T* = {HORIZON_FACTOR * tstar:g}")
    order = np.argsort(levels)
    taus = np.array(_map_paths(lambda i: passage_times(params, levels[order], i), n_paths, workers))
    out = [None] * len(levels)
    for c, li in enumerate(order):
        out[li] = _summarise(float(levels[li]), taus[:, c], params.t_final, tstar, probe_T)
    return out[0] if scalar else out


@dataclass
class StudyRow:
    gamma: float
    kappa: float
    sigma: float
    y_level: float
    mean_tau: float
    se: float
    tstar: float

    @property
    def ratio(self) -> float:
        return self.mean_tau / self.tstar


def fpt_study(base: SimParams, sigmas, y_levels, n_paths: int, horizon_factor: float = HORIZON_FACTOR, workers=None) -> list[StudyRow]:
    """E[tau(y)] across sigma values; each run uses t_final = horizon_factor * T*."""
    rows = []
    for s in sigmas:
        noise = NoiseParams(base.noise.gamma, s)
        tstar = relaxation_time(noise.gamma, base.kappa, s)
        p = replace(base, noise=noise, t_final=horizon_factor * tstar)
        for r in fpt_ensemble(p, list(y_levels), n_paths, workers=workers):
            rows.append(StudyRow(noise.gamma, base.kappa, s, r.y_level, r.mean, r.se, tstar))
    return rows


# ---------------------------------------------------------------------------
# survival probe on a box in (y, Z)


@dataclass
class SurvivalProbe:
    q: float
    worst: tuple
    q_grid: np.ndarray  # (len(z0s), len(y0s))
    z0s: np.ndarray
    y0s: np.ndarray
    T: float
    bound: float
    bound_available: bool


def domain_exit_times(params: SimParams, domain: DomainSpec, y0: float, z0: float, n_paths: int, path_offset: int = 0, workers=None):
    """Exit times (nan when censored at t_final) and sides from (y0, z0), phi drawn uniformly per path."""

    def one(i):
        phi = 2 * np.pi * path_rng(params.seed, path_offset + i, STATE_STREAM).random()
        return exit_time(params, domain.y_low, domain.y_high, domain.z_bound, path_offset + i, state_from_y(y0, phi), z0)

    res = _map_paths(one, n_paths, workers)
    return np.array([r[0] for r in res]), np.array([r[1] for r in res])


def implied_mean_bound(T: float, q: float) -> float:
    """E[tau] <= T / (q log(1/q)) from geometric chaining of P(tau > T) <= q."""
    if not 0.0 < q < 1.0:
        return float("nan")
    return T / (q * np.log(1.0 / q))


def survival_probe(params: SimParams, domain: DomainSpec, T_probe: float, n_paths: int, grid: int = 5, workers=None) -> SurvivalProbe:
    """Worst-of-grid estimate of P(tau_D > T_probe) over initial (Z0, y0) in a grid x grid lattice."""
    if T_probe <= 0:
        raise ValueError("T_probe must be positive")
    p = replace(params, t_final=max(T_probe, params.dt))
    z0s = domain.z_bound * np.linspace(-0.8, 0.8, grid)
    edge = 0.1 * (domain.y_high - domain.y_low)
    y0s = np.linspace(domain.y_low + edge, domain.y_high - edge, grid)
    qg = np.empty((grid, grid))
    for a, z0 in enumerate(z0s):
        for b, y0 in enumerate(y0s):
            offset = (a * grid + b) * n_paths
            times, _ = domain_exit_times(p, domain, y0, z0, n_paths, offset, workers)
            qg[a, b] = np.mean(np.isnan(times) | (times > T_probe))
    a, b = np.unravel_index(np.argmax(qg), qg.shape)
    q = float(qg[a, b])
    bound = implied_mean_bound(T_probe, q)
    return SurvivalProbe(q, (float(z0s[a]), float(y0s[b])), qg, z0s, y0s, T_probe, bound, bool(np.isfinite(bound)))


# ---------------------------------------------------------------------------
# renewal composition


def renewal_compose(E1: float, E2: float, p_success: float) -> float:
    """Expected total time (E1 + E2) / p when each attempt costs E1 + E2 and succeeds with probability p."""
    if not 0.0 < p_success <= 1.0:
        raise ValueError("p_success must lie in (0, 1]")
    return (E1 + E2) / p_success


def renewal_bound(E1: float, E2: float, p1: float, p2: float) -> float:
    """Upper bound 2 (E1 + E2) / (1 - p1 p2)."""
    if p1 * p2 >= 1.0:
        raise ValueError("need p1 * p2 < 1")
    return 2.0 * (E1 + E2) / (1.0 - p1 * p2)


@dataclass
class RenewalExperiment:
    direct_mean: float
    direct_se: float
    E1: float
    E2: float
    p_up: float
    composed: float
    bound: float
    details: dict = field(default_factory=dict)


def renewal_experiment(params: SimParams, y_mid: float = -0.5, y_low: float = -0.9, y_top: float = 0.0, n_paths: int = 500, workers=None) -> RenewalExperiment:
    """Compare E[tau(y_top)] with the two-stage renewal composition.

    Stage 1: from U0 = 1 up to y_mid.  Stage 2: from y_mid (stationary Z, uniform
    phi) until exit from (y_low, y_top); success means leaving through y_top.
    """
    direct = fpt_ensemble(params, [y_mid, y_top], n_paths, workers=workers, check_horizon=False)
    stage1, top = direct
    # disjoint noise indices for the second stage
    offset = 10 * n_paths

    def one(i):
        rng = path_rng(params.seed, offset + i, STATE_STREAM)
        phi = 2 * np.pi * rng.random()
        return exit_time(params, y_low, y_top, np.inf, offset + i, state_from_y(y_mid, phi))

    res = _map_paths(one, n_paths, workers)
    times = np.array([r[0] for r in res])
    sides = np.array([r[1] for r in res])
    ok = ~np.isnan(times)
    E2 = float(times[ok].mean())
    p_up = float(np.mean(sides[ok] == 1))
    composed = renewal_compose(stage1.mean, E2, p_up)
    bound = renewal_bound(stage1.mean, E2, 1.0 - p_up, 1.0)
    return RenewalExperiment(top.mean, top.se, stage1.mean, E2, p_up, composed, bound, {"stage2_censored": int((~ok).sum())})


# ---------------------------------------------------------------------------
# noise excursions


@njit(cache=True, nogil=True)
def _ou_hit(z, decay, std, draws, level, target_zero):
    """Index of the first step at which |Z| >= level (or Z crosses 0); -1 if none."""
    for j in range(draws.shape[0]):
        zn = decay * z + std * draws[j]
        if target_zero:
            if zn == 0.0 or (zn > 0.0) != (z > 0.0):
                return j + 1, zn
        elif abs(zn) >= level:
            return j + 1, zn
        z = zn
    return -1, z


def _hitting_times(noise: NoiseParams, level: float, n_paths: int, dt: float, t_max: float, seed: int, z0=None, to_zero=False):
    decay, std = (float(v) for v in ou_transition(noise, dt))
    n_max = int(np.ceil(t_max / dt))
    out = np.full(n_paths, np.nan)
    chunk = 1 << 14
    for i in range(n_paths):
        rng = path_rng(seed, i)
        drawn = sample_stationary(noise, rng)
        z = drawn if z0 is None else float(z0)
        if (not to_zero and abs(z) >= level) or (to_zero and z == 0.0):
            out[i] = 0.0
            continue
        done = 0
        while done < n_max:
            m = min(chunk, n_max - done)
            j, z = _ou_hit(z, decay, std, rng.standard_normal(m), level, to_zero)
            if j >= 0:
                out[i] = (done + j) * dt
                break
            done += m
    return out


@dataclass
class HittingResult:
    mean: float
    se: float
    censored_fraction: float
    samples: np.ndarray


def _hit_summary(t):
    ok = ~np.isnan(t)
    vals = t[ok]
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
    return HittingResult(float(vals.mean()) if len(vals) else float("nan"), se, float(1 - ok.mean()), t)


def z_excursion_time(noise: NoiseParams, level: float, n_paths: int = 1000, dt: float = 1e-3, t_max: float = 1e4, seed: int = 0) -> HittingResult:
    """Monte Carlo first time |Z_t| >= level from a stationary start (grid-monitored)."""
    if level <= 0:
        return HittingResult(0.0, 0.0, 0.0, np.zeros(n_paths))
    return _hit_summary(_hitting_times(noise, level, n_paths, dt, t_max, seed))


def z_zero_time(noise: NoiseParams, z0: float, n_paths: int = 1000, dt: float = 1e-3, t_max: float = 1e4, seed: int = 0) -> HittingResult:
    """Monte Carlo first time Z_t changes sign starting from z0."""
    return _hit_summary(_hitting_times(noise, 0.0, n_paths, dt, t_max, seed, z0=z0, to_zero=True))


def z_excursion_exact(noise: NoiseParams, level: float) -> float:
    """Mean exit time of (-level, level), averaged over the stationary start.

    For |z| < L, T(z) = (2/sigma^2) int_{|z|}^L e^{U(u)} int_0^u e^{-U(v)} dv du with
    U(u) = gamma u^2 / sigma^2; starts outside the interval contribute zero.
    """
    g, s2 = noise.gamma, noise.sigma**2
    L = level
    # inner integral in closed form: int_0^u e^{-g v^2/s2} dv = sqrt(pi s2/(4g)) erf(u sqrt(g/s2))
    c = np.sqrt(g / s2)

    def inner(u):
        return np.sqrt(np.pi) / (2 * c) * erf(c * u)

    def T(z):
        # e^{U(u)} inner(u) can be huge; integrate in log-safe form relative to U(L)
        val, _ = integrate.quad(lambda u: np.exp(g * (u * u - L * L) / s2) * inner(u), abs(z), L, limit=200)
        return 2.0 / s2 * val  # scaled by e^{-U(L)}

    var = noise.stationary_variance
    dens = lambda z: np.exp(-z * z / (2 * var)) / np.sqrt(2 * np.pi * var)
    avg, _ = integrate.quad(lambda z: 2 * T(z) * dens(z), 0.0, L, limit=200)
    return float(avg * np.exp(g * L * L / s2))


def z_zero_exact(noise: NoiseParams, z0: float) -> float:
    """Mean first time an OU path started at z0 reaches 0.

    T(z0) = (2/sigma^2) int_0^{|z0|} e^{U(u)} int_u^inf e^{-U(v)} dv du.
    """
    g, s2 = noise.gamma, noise.sigma**2
    c = np.sqrt(g / s2)

    # e^{U(u)} int_u^inf e^{-U} = sqrt(pi)/(2c) erfcx(c u)
    val, _ = integrate.quad(lambda u: np.sqrt(np.pi) / (2 * c) * erfcx(c * u), 0.0, abs(z0))
    return float(2.0 / s2 * val)
