"""Noise-driven Schrodinger flow on SU(2).

The propagator obeys dU/dt = -i H_t U with H_t = kappa Z_t sigma_x + sigma_z / 2.
In quaternion components this is the linear ODE q' = M(kappa Z_t) q with a
skew-symmetric M, integrated here by classical RK4.  Z is sampled exactly on a
half-step grid so every RK4 stage sees the true noise value, and q is projected
back to the unit sphere after each step.

Ensembles run path by path through numba kernels that release the GIL; the
worker count is capped by the ``SPINBATH_THREADS`` environment variable.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import su2
from .noise import STATE_STREAM, NoiseParams, UniformNoiseStream, path_rng

# steps per noise chunk; draws are consumed sequentially so this only affects memory
CHUNK_STEPS = 1 << 14
ANGLE_SINGULAR_EPS = 1e-3


@dataclass(frozen=True)
class SimParams:
    noise: NoiseParams
    kappa: float
    dt: float
    t_final: float
    seed: int
    output_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ValueError("t_final must be >= dt")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if int(self.output_stride) < 1:
            raise ValueError("output_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def tstar(self) -> float:
        return relaxation_time(self.noise.gamma, self.kappa, self.noise.sigma)


def relaxation_time(gamma: float, kappa: float, sigma: float) -> float:
    """T* = max((1 + gamma^2) / (kappa sigma)^2, 1 / gamma); infinite when kappa sigma = 0."""
    ks = kappa * sigma
    if ks == 0:
        return float("inf")
    return max((1.0 + gamma**2) / ks**2, 1.0 / gamma)


@dataclass
class Trajectory:
    times: np.ndarray
    z: np.ndarray
    q: np.ndarray
    norm_drift: float = 0.0  # |log ‖q‖| of the unrenormalised flow, per unit time
    _angles: su2.AngleState | None = field(default=None, repr=False)

    @property
    def angles(self) -> su2.AngleState:
        if self._angles is None:
            self._angles = su2.quaternion_to_angles(self.q)
        return self._angles

    @property
    def chi(self):
        return self.angles.chi

    @property
    def phi(self):
        return self.angles.phi

    @property
    def psi(self):
        return self.angles.psi

    @property
    def rho(self) -> np.ndarray:
        return np.clip(transition_probability(self.q), 0.0, 1.0)

    @property
    def y(self) -> np.ndarray:
        return 2.0 * self.rho - 1.0

    def as_table(self) -> np.ndarray:
        """Columns t, Z, x1..x4, chi, phi, psi, rho."""
        a = self.angles
        return np.column_stack([self.times, self.z, self.q, a.chi, a.phi, a.psi, self.rho])


TRAJECTORY_HEADER = "t,Z,x1,x2,x3,x4,chi,phi,psi,rho"


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True)
def _rhs(x1, x2, x3, x4, a):
    # a = kappa * Z
    return (-0.5 * x2 - a * x4, 0.5 * x1 - a * x3, -0.5 * x4 + a * x2, 0.5 * x3 + a * x1)


@njit(cache=True, nogil=True)
def _rk4_step(q, a0, am, a1, dt):
    """One RK4 step in place; returns ‖q‖² - 1 before renormalisation."""
    x1, x2, x3, x4 = q[0], q[1], q[2], q[3]
    h = 0.5 * dt
    k1 = _rhs(x1, x2, x3, x4, a0)
    k2 = _rhs(x1 + h * k1[0], x2 + h * k1[1], x3 + h * k1[2], x4 + h * k1[3], am)
    k3 = _rhs(x1 + h * k2[0], x2 + h * k2[1], x3 + h * k2[2], x4 + h * k2[3], am)
    k4 = _rhs(x1 + dt * k3[0], x2 + dt * k3[1], x3 + dt * k3[2], x4 + dt * k3[3], a1)
    c = dt / 6.0
    x1 += c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    x2 += c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    x3 += c * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    x4 += c * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    n2 = x1 * x1 + x2 * x2 + x3 * x3 + x4 * x4
    inv = 1.0 / np.sqrt(n2)
    q[0] = x1 * inv
    q[1] = x2 * inv
    q[2] = x3 * inv
    q[3] = x4 * inv
    return n2 - 1.0


@njit(cache=True, nogil=True)
def _rk4_record(q, zh, kappa, dt, stride, rec_q, rec_z):
    """Advance len(zh)//2 steps; store q and Z after every ``stride``-th step.

    Returns (number of records written, log-norm growth before renormalisation).
    The map is linear, so the summed per-step log factors equal the log of the
    norm the unrenormalised integrator would have reached.
    """
    n = (zh.shape[0] - 1) // 2
    count = 0
    drift = 0.0
    for j in range(n):
        drift += 0.5 * np.log1p(_rk4_step(q, kappa * zh[2 * j], kappa * zh[2 * j + 1], kappa * zh[2 * j + 2], dt))
        if (j + 1) % stride == 0:
            for c in range(4):
                rec_q[count, c] = q[c]
            rec_z[count] = zh[2 * j + 2]
            count += 1
    return count, drift


@njit(cache=True, nogil=True)
def _rk4_passage(q, zh, kappa, dt, t0, levels, taus):
    """Advance and record first times y = 2(x1² + x2²) - 1 exceeds each level.

    ``taus`` holds nan for levels not yet reached.  Crossing times are linearly
    interpolated between steps.  Returns the number of steps taken; stops early
    once every level has been reached.
    """
    n = (zh.shape[0] - 1) // 2
    y_prev = 2.0 * (q[0] * q[0] + q[1] * q[1]) - 1.0
    remaining = 0
    for i in range(levels.shape[0]):
        if np.isnan(taus[i]):
            remaining += 1
    if remaining == 0:
        return 0
    for j in range(n):
        _rk4_step(q, kappa * zh[2 * j], kappa * zh[2 * j + 1], kappa * zh[2 * j + 2], dt)
        y = 2.0 * (q[0] * q[0] + q[1] * q[1]) - 1.0
        for i in range(levels.shape[0]):
            if np.isnan(taus[i]) and y > levels[i]:
                frac = (levels[i] - y_prev) / (y - y_prev)
                if frac < 0.0:
                    frac = 0.0
                taus[i] = t0 + dt * (j + frac)
                remaining -= 1
        y_prev = y
        if remaining == 0:
            return j + 1
    return n


@njit(cache=True, nogil=True)
def _rk4_exit(q, zh, kappa, dt, t0, y_low, y_high, z_bound, out):
    """Advance until y leaves (y_low, y_high) or |Z| reaches z_bound.

    On exit writes out[0] = exit time and out[1] = side (-1 low, +1 high,
    2 noise bound) and returns the steps taken; otherwise returns -1.
    """
    n = (zh.shape[0] - 1) // 2
    y_prev = 2.0 * (q[0] * q[0] + q[1] * q[1]) - 1.0
    for j in range(n):
        _rk4_step(q, kappa * zh[2 * j], kappa * zh[2 * j + 1], kappa * zh[2 * j + 2], dt)
        y = 2.0 * (q[0] * q[0] + q[1] * q[1]) - 1.0
        if y >= y_high:
            out[0] = t0 + dt * (j + (y_high - y_prev) / (y - y_prev))
            out[1] = 1.0
            return j + 1
        if y <= y_low:
            out[0] = t0 + dt * (j + (y_low - y_prev) / (y - y_prev))
            out[1] = -1.0
            return j + 1
        if abs(zh[2 * j + 2]) >= z_bound:
            out[0] = t0 + dt * (j + 1)
            out[1] = 2.0
            return j + 1
        y_prev = y
    return -1


# ---------------------------------------------------------------------------
# single paths


def rhs_quaternion(q, z, kappa) -> np.ndarray:
    """Right-hand side of the quaternion ODE with real noise value ``z``."""
    q = np.asarray(q, dtype=float)
    return np.array(_rhs(q[0], q[1], q[2], q[3], kappa * z))


def step(q, z_segment, kappa: float, dt: float) -> np.ndarray:
    """One renormalised RK4 step; ``z_segment`` = (Z(t), Z(t + dt/2), Z(t + dt))."""
    out = np.array(q, dtype=float)
    z0, zm, z1 = z_segment
    _rk4_step(out, kappa * z0, kappa * zm, kappa * z1, dt)
    return out


def transition_probability(q):
    """rho = x1² + x2² = sin² chi."""
    return su2.transition_probability(q)


def identity_state() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0])


def state_from_y(y: float, phi: float = 0.0, psi: float = 0.0) -> np.ndarray:
    """Quaternion with y = 2 rho - 1 = -cos 2 chi and the given phases."""
    chi = 0.5 * np.arccos(-np.clip(y, -1.0, 1.0))
    return su2.angles_to_quaternion((chi, phi, psi))


def _noise_stream(params: SimParams, index: int, z0=None) -> UniformNoiseStream:
    return UniformNoiseStream(params.noise, 0.5 * params.dt, path_rng(params.seed, index), z0)


def simulate(params: SimParams, initial=None, index: int = 0, z0=None) -> Trajectory:
    """Integrate one path from ``initial`` (default U0 = 1), recording every ``output_stride`` steps."""
    q = identity_state() if initial is None else np.array(initial, dtype=float)
    su2.check_normalized(q)
    stride = int(params.output_stride)
    n_steps = params.n_steps
    n_rec = n_steps // stride
    stream = _noise_stream(params, index, z0)
    rec_q = np.empty((n_rec + 1, 4))
    rec_z = np.empty(n_rec + 1)
    rec_q[0] = q
    rec_z[0] = stream.z
    chunk = max(stride, (CHUNK_STEPS // stride) * stride)
    done, pos, drift = 0, 1, 0.0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        zh = stream.next_chunk(2 * m)
        cnt, d = _rk4_record(q, zh, params.kappa, params.dt, stride, rec_q[pos:], rec_z[pos:])
        pos += cnt
        drift += d
        done += m
    times = params.dt * stride * np.arange(n_rec + 1)
    return Trajectory(times=times, z=rec_z, q=rec_q, norm_drift=abs(drift) / (n_steps * params.dt))


def _angle_rhs(chi, phi, a):
    s2 = np.sin(2 * chi)
    if abs(s2) < ANGLE_SINGULAR_EPS:
        raise FloatingPointError(f"angular integration too close to chi in {{0, pi/2}} (|sin 2chi| = {abs(s2):.2e})")
    cp, sp = np.cos(phi), np.sin(phi)
    return np.array([a * sp, 1.0 + 2.0 * a * cp * np.cos(2 * chi) / s2, -a * cp / s2])


def simulate_angles(params: SimParams, initial: su2.AngleState, index: int = 0, z0=None) -> Trajectory:
    """Diagnostic RK4 integration of the singular angular system.

    Uses the same noise stream as :func:`simulate` with the same ``index``.
    Raises FloatingPointError when |sin 2 chi| drops below 1e-3.
    """
    stride = int(params.output_stride)
    n_steps = params.n_steps
    stream = _noise_stream(params, index, z0)
    zh = stream.next_chunk(2 * n_steps)
    x = np.array(initial, dtype=float)
    dt, kap = params.dt, params.kappa
    rec = [x.copy()]
    rec_z = [zh[0]]
    for j in range(n_steps):
        a0, am, a1 = kap * zh[2 * j], kap * zh[2 * j + 1], kap * zh[2 * j + 2]
        k1 = _angle_rhs(x[0], x[1], a0)
        k2 = _angle_rhs(x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1], am)
        k3 = _angle_rhs(x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1], am)
        k4 = _angle_rhs(x[0] + dt * k3[0], x[1] + dt * k3[1], a1)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (j + 1) % stride == 0:
            rec.append(x.copy())
            rec_z.append(zh[2 * j + 2])
    ang = np.array(rec)
    q = su2.angles_to_quaternion(ang.T)
    times = params.dt * stride * np.arange(len(rec))
    # keep the unreduced (continuous) angles so callers can compare lifts
    return Trajectory(times=times, z=np.array(rec_z), q=q, _angles=su2.AngleState(ang[:, 0], ang[:, 1], ang[:, 2]))


# ---------------------------------------------------------------------------
# ensembles


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("SPINBATH_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _map_paths(fn, n_paths: int, workers: int | None = None):
    w = worker_count(workers)
    if w == 1 or n_paths == 1:
        return [fn(i) for i in range(n_paths)]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, range(n_paths)))


def initial_state(kind: str, seed: int, index: int) -> np.ndarray:
    """``identity`` or ``haar``; Haar draws come from the path's state stream."""
    if kind == "identity":
        return identity_state()
    if kind == "haar":
        a = su2.haar_sample(path_rng(seed, index, STATE_STREAM))
        return su2.angles_to_quaternion(a)
    raise ValueError(f"unknown initial state kind {kind!r}")


@dataclass
class Ensemble:
    times: np.ndarray
    rho: np.ndarray  # (n_paths, n_times)
    final_q: np.ndarray  # (n_paths, 4)
    final_z: np.ndarray
    max_norm_drift: float


def simulate_ensemble(params: SimParams, n_paths: int, initial: str = "identity", workers: int | None = None) -> Ensemble:
    """Run ``n_paths`` independent paths; path i uses noise index i."""

    def one(i):
        tr = simulate(params, initial_state(initial, params.seed, i), index=i)
        return tr.rho, tr.q[-1], tr.z[-1], tr.norm_drift, tr.times

    res = _map_paths(one, n_paths, workers)
    return Ensemble(
        times=res[0][4],
        rho=np.array([r[0] for r in res]),
        final_q=np.array([r[1] for r in res]),
        final_z=np.array([r[2] for r in res]),
        max_norm_drift=max(r[3] for r in res),
    )


def passage_times(params: SimParams, levels, index: int, initial=None, z0=None) -> np.ndarray:
    """First times y_t exceeds each level on path ``index``; nan if not reached by t_final."""
    levels = np.asarray(levels, dtype=float)
    q = identity_state() if initial is None else np.array(initial, dtype=float)
    taus = np.full(len(levels), np.nan)
    y0 = 2.0 * (q[0] ** 2 + q[1] ** 2) - 1.0
    taus[levels <= y0] = 0.0
    stream = _noise_stream(params, index, z0)
    n_steps, done = params.n_steps, 0
    while done < n_steps and np.isnan(taus).any():
        m = min(CHUNK_STEPS, n_steps - done)
        zh = stream.next_chunk(2 * m)
        _rk4_passage(q, zh, params.kappa, params.dt, done * params.dt, levels, taus)
        done += m
    return taus


def exit_time(params: SimParams, y_low: float, y_high: float, z_bound: float, index: int, initial, z0=None):
    """(exit time, side) for the box (y_low, y_high) x (-z_bound, z_bound); (nan, 0) if censored."""
    q = np.array(initial, dtype=float)
    stream = _noise_stream(params, index, z0)
    if abs(stream.z) >= z_bound:
        return 0.0, 2
    out = np.zeros(2)
    n_steps, done = params.n_steps, 0
    while done < n_steps:
        m = min(CHUNK_STEPS, n_steps - done)
        zh = stream.next_chunk(2 * m)
        if _rk4_exit(q, zh, params.kappa, params.dt, done * params.dt, y_low, y_high, z_bound, out) >= 0:
            return float(out[0]), int(out[1])
        done += m
    return float("nan"), 0
