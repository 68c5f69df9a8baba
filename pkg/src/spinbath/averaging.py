"""Averaging of the fast phase and the effective diffusion for y = 2 rho - 1.

In the variables (Z, y, phi) the slow coordinate obeys

    dy = 2 kappa Z sqrt(1 - y^2) sin(phi) dt,      dphi = (1 + O(kappa Z)) dt,

so y oscillates at O(kappa) amplitude around a slowly drifting centre.  The
corrected variable ybar = y + kappa w, with

    w = 2 Z / (1 + gamma^2) * sqrt(1 - y^2) * (cos phi + gamma sin phi),

removes the oscillating O(kappa) drift.  Applying Ito's formula one finds,
with no remainder,

    dybar = -(4 kappa^2 gamma / (1 + gamma^2)) Z^2 y dt
            + (2 kappa sigma / (1 + gamma^2)) sqrt(1 - y^2) (cos phi + gamma sin phi) dW.

Replacing Z^2 by its mean sigma^2 / (2 gamma), cos^2 by 1/2 and y by ybar gives
dybar = -(2/T) ybar dt + sqrt(2/T) sqrt(1 - ybar^2) dW with
T = (1 + gamma^2) / (kappa sigma)^2, i.e. dybar = -ybar ds + sqrt(1 - ybar^2) dW_s
in the rescaled time s = t / (T/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import eval_legendre

from .dynamics import SimParams, Trajectory


@dataclass(frozen=True)
class YState:
    y: float
    ybar: float


@dataclass(frozen=True)
class EffectiveParams:
    tstar: float
    theta: float


def effective_params(gamma: float, kappa: float, sigma: float) -> EffectiveParams:
    ks = kappa * sigma
    t = (1.0 + gamma**2) / ks**2 if ks > 0 else float("inf")
    return EffectiveParams(tstar=max(t, 1.0 / gamma), theta=float(np.arctan(gamma)))


def corrector_w(z, y, phi, gamma):
    y = np.asarray(y, dtype=float)
    return 2.0 * np.asarray(z) / (1.0 + gamma**2) * np.sqrt(np.clip(1.0 - y * y, 0.0, None)) * (np.cos(phi) + gamma * np.sin(phi))


def homological_residual(z, y, phi, gamma, h: float = 1e-5):
    """2 z sqrt(1-y^2) sin(phi) - gamma z dw/dZ + dw/dphi, derivatives by central differences."""
    dwdz = (corrector_w(z + h, y, phi, gamma) - corrector_w(z - h, y, phi, gamma)) / (2 * h)
    dwdphi = (corrector_w(z, y, phi + h, gamma) - corrector_w(z, y, phi - h, gamma)) / (2 * h)
    y = np.asarray(y, dtype=float)
    return 2.0 * z * np.sqrt(1.0 - y * y) * np.sin(phi) - gamma * z * dwdz + dwdphi


def effective_drift(z, ybar, gamma, kappa):
    return -4.0 * kappa**2 * gamma / (1.0 + gamma**2) * np.asarray(z) ** 2 * np.asarray(ybar)


def effective_diffusion(z, ybar, phi, gamma, kappa, sigma):
    """Noise coefficient multiplying dW; equals 2 kappa sigma sqrt((1-ybar^2)/(1+gamma^2)) cos(phi - arctan gamma).

    ``z`` is accepted for a uniform signature; the coefficient does not depend on it.
    """
    ybar = np.asarray(ybar, dtype=float)
    theta = np.arctan(gamma)
    return 2.0 * kappa * sigma * np.sqrt(np.clip(1.0 - ybar**2, 0.0, None) / (1.0 + gamma**2)) * np.cos(np.asarray(phi) - theta)


def ybar_of(traj: Trajectory, gamma: float, kappa: float) -> np.ndarray:
    """Corrected variable y + kappa w along a simulated trajectory."""
    return traj.y + kappa * corrector_w(traj.z, traj.y, traj.phi, gamma)


def integrate_corrected(traj: Trajectory, gamma: float, kappa: float, sigma: float) -> np.ndarray:
    """Integrate the exact ybar equation along ``traj`` with its own noise.

    The Brownian increment is recovered from the stored noise path as
    sigma dW = dZ + gamma Z dt (trapezoid in the drift part).  The integrands
    depend on (y, phi), which are differentiable in t, so a left-point sum
    converges without Ito correction.
    """
    t, z, y, phi = traj.times, traj.z, traj.y, traj.phi
    dt = np.diff(t)
    dz = np.diff(z)
    sdw = dz + gamma * 0.5 * (z[1:] + z[:-1]) * dt
    drift = -4.0 * kappa**2 * gamma / (1.0 + gamma**2) * z**2 * y
    coeff = 2.0 * kappa / (1.0 + gamma**2) * np.sqrt(np.clip(1.0 - y * y, 0.0, None)) * (np.cos(phi) + gamma * np.sin(phi))
    # trapezoid for the dt part, left point for the stochastic part
    incr = 0.5 * (drift[1:] + drift[:-1]) * dt + coeff[:-1] * sdw
    start = y[0] + kappa * corrector_w(z[0], y[0], phi[0], gamma)
    return start + np.concatenate([[0.0], np.cumsum(incr)])


# ---------------------------------------------------------------------------
# idealised one-dimensional diffusion  dy = -y ds + sqrt(1 - y^2) dW


def effective_1d_step(ybar, dt, gaussian_draw):
    """Euler-Maruyama step clamped to [-1, 1]."""
    ybar = np.asarray(ybar, dtype=float)
    out = ybar - ybar * dt + np.sqrt(np.clip(1.0 - ybar**2, 0.0, None) * dt) * gaussian_draw
    return np.clip(out, -1.0, 1.0)


def simulate_effective_1d(y0, s_final: float, ds: float, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Terminal values of ``n_paths`` independent copies at rescaled time ``s_final``."""
    y = np.full(n_paths, float(y0)) if np.ndim(y0) == 0 else np.array(y0, dtype=float)
    n = int(round(s_final / ds))
    for _ in range(n):
        y = effective_1d_step(y, ds, rng.standard_normal(n_paths))
    return y


def effective_cdf(y, s: float, y0: float = -1.0, l_max: int = 200):
    """Exact CDF of the 1D diffusion at time s from y0, by Legendre expansion.

    The transition density is sum_l (2l+1)/2 P_l(y) P_l(y0) exp(-l(l+1)s/2);
    integrating term by term uses int_{-1}^y P_l = (P_{l+1} - P_{l-1}) / (2l+1).
    """
    if s <= 0:
        raise ValueError("s must be positive")
    y = np.asarray(y, dtype=float)
    out = (y + 1.0) / 2.0
    for l in range(1, l_max + 1):
        decay = np.exp(-0.5 * l * (l + 1) * s)
        if decay < 1e-17:
            break
        out = out + 0.5 * eval_legendre(l, y0) * decay * (eval_legendre(l + 1, y) - eval_legendre(l - 1, y))
    return np.clip(out, 0.0, 1.0)


def effective_mean(s, y0: float):
    return y0 * np.exp(-np.asarray(s))


def rescaled_time(t, tstar: float, factor: float = 0.5):
    """Effective-process time s = t / (factor * T*); default factor 1/2."""
    return np.asarray(t) / (factor * tstar)


# ---------------------------------------------------------------------------
# time average of the squared noise


def time_average_X(times, z, t: float, gamma: float, sigma: float) -> float:
    """X_t = (2 gamma / sigma^2) (1/t) int_0^t Z^2 ds - 1, trapezoid on the stored grid."""
    if not t > 0:
        raise ValueError("t must be positive")
    times = np.asarray(times, dtype=float)
    z = np.asarray(z, dtype=float)
    if t > times[-1] + 1e-12:
        raise ValueError("t beyond the stored path")
    m = np.searchsorted(times, t, side="right")
    tt = times[:m]
    zz2 = z[:m] ** 2
    if tt[-1] < t:
        # append the linearly interpolated endpoint
        zt = np.interp(t, times, z)
        tt = np.append(tt, t)
        zz2 = np.append(zz2, zt**2)
    integral = np.trapezoid(zz2, tt) if hasattr(np, "trapezoid") else np.trapz(zz2, tt)
    return 2.0 * gamma / sigma**2 * integral / t - 1.0


def x_variance(gamma: float, t):
    """Var X_t for a stationary OU path: (2/(gamma t)) (1 - (1 - e^{-2 gamma t}) / (2 gamma t))."""
    u = 2.0 * gamma * np.asarray(t, dtype=float)
    return 2.0 / (gamma * np.asarray(t)) * (1.0 - (-np.expm1(-u)) / u)


def ybar_ensemble(params: SimParams, n_paths: int, t_eval: float, workers=None) -> np.ndarray:
    """ybar at time ``t_eval`` for ``n_paths`` paths started from U0 = 1."""
    from dataclasses import replace

    from .dynamics import _map_paths, simulate

    n = int(round(t_eval / params.dt))
    p = replace(params, t_final=n * params.dt, output_stride=n)

    def one(i):
        tr = simulate(p, index=i)
        return ybar_of(tr, params.noise.gamma, params.kappa)[-1]

    return np.array(_map_paths(one, n_paths, workers))
