"""Statistical helpers: uniformity tests, relaxation fits and autocorrelation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

FIT_WINDOW_MAX = 0.45


def ks_uniform(samples):
    """Two-sided KS statistic and asymptotic p-value against Uniform[0, 1]."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    res = stats.kstest(x, "uniform", method="asymp")
    return float(res.statistic), float(res.pvalue)


@dataclass
class FitResult:
    rate: float
    amplitude: float
    r_squared: float
    converged: bool
    message: str = ""


def relaxation_fit(times, means, window_max: float = FIT_WINDOW_MAX) -> FitResult:
    """Fit mean(t) = 1/2 - A exp(-rate t) on the window where mean < ``window_max``.

    A straight line is fitted to log(1/2 - mean) to get starting values, then
    the model is refined by least squares on the means themselves.  R^2 is
    reported for the refined model on the fitting window.  A degenerate input
    (for instance means that never move) gives ``converged=False`` and a nan rate.
    """
    t = np.asarray(times, dtype=float)
    m = np.asarray(means, dtype=float)
    if t.shape != m.shape or t.ndim != 1:
        raise ValueError("times and means must be 1-d arrays of equal length")
    sel = (m < window_max) & np.isfinite(m)
    t, m = t[sel], m[sel]
    nan = float("nan")
    if len(t) < 3 or np.ptp(m) <= 1e-12 * max(1.0, abs(m).max()):
        return FitResult(nan, nan, nan, False, "degenerate data: no relaxation in the fitting window")
    resid = 0.5 - m
    slope, icept = np.polyfit(t, np.log(resid), 1)
    p0 = (max(np.exp(icept), 1e-12), max(-slope, 1e-12))

    def model(tt, A, r):
        return 0.5 - A * np.exp(-r * tt)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            (A, r), _ = optimize.curve_fit(model, t, m, p0=p0, maxfev=10000)
    except RuntimeError as exc:
        return FitResult(nan, nan, nan, False, f"least squares did not converge: {exc}")
    fitted = model(t, A, r)
    ss_tot = np.sum((m - m.mean()) ** 2)
    r2 = float(1.0 - np.sum((m - fitted) ** 2) / ss_tot) if ss_tot > 0 else nan
    ok = bool(np.isfinite(r) and r >= 0)
    return FitResult(float(r), float(A), r2, ok, "" if ok else "negative rate")


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation for lags 0..max_lag.

    A constant series has zero variance; by convention its correlation is 1 at every lag.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n <= 4 * max_lag:
        raise ValueError("series length must exceed 4 * max_lag")
    d = x - x.mean()
    c0 = np.dot(d, d) / n
    if c0 <= 1e-300:
        return np.ones(max_lag + 1)
    return np.array([np.dot(d[: n - k], d[k:]) / n / c0 for k in range(max_lag + 1)])
