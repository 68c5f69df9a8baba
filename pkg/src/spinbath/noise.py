"""Ornstein-Uhlenbeck driving noise.

The OU process dZ = -gamma Z dt + sigma dW is advanced with its exact Gaussian
transition kernel, so grid spacing never introduces discretisation error in Z.

Random streams
--------------
Every run has one integer master seed.  Path ``i`` of an ensemble draws its
noise from ``SeedSequence(seed, spawn_key=(i, 0))`` and any random initial
state from ``SeedSequence(seed, spawn_key=(i, 1))``.  Within the noise stream
the first normal draw is the stationary initial value Z0, followed by one
normal per grid interval, in order.  Draws are consumed sequentially, so
chunked generation reproduces single-shot generation bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numba import njit

NOISE_STREAM = 0
STATE_STREAM = 1


@dataclass(frozen=True)
class NoiseParams:
    """OU parameters: decay rate ``gamma`` (> 0) and intensity ``sigma`` (>= 0)."""

    gamma: float
    sigma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.gamma)

    @property
    def stationary_std(self) -> float:
        return float(np.sqrt(self.stationary_variance))


@dataclass
class NoisePath:
    times: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


class StationaryNoise(Protocol):
    """Interface for a stationary scalar noise with an (exact or approximate) stepper.

    Only :class:`OUNoise` ships.  A different diffusion dZ = f(Z) dt + g(Z) dW can
    be plugged into the dynamics by implementing these two methods.
    """

    def sample_stationary(self, rng: np.random.Generator) -> float: ...

    def advance(self, z0: float, dts: np.ndarray, draws: np.ndarray) -> np.ndarray:
        """Values after each interval in ``dts``, starting from ``z0``."""
        ...


def sample_stationary(params: NoiseParams, rng: np.random.Generator) -> float:
    """One draw from the stationary law N(0, sigma^2 / (2 gamma))."""
    return params.stationary_std * rng.standard_normal()


def ou_transition(params: NoiseParams, dt):
    """Decay factor and conditional standard deviation of the exact kernel over ``dt``."""
    dt = np.asarray(dt, dtype=float)
    decay = np.exp(-params.gamma * dt)
    # -expm1(-2 gamma dt) keeps precision for gamma*dt << 1
    std = np.sqrt(params.sigma**2 * -np.expm1(-2.0 * params.gamma * dt) / (2.0 * params.gamma))
    return decay, std


def ou_exact_step(z: float, params: NoiseParams, dt: float, gaussian_draw: float) -> float:
    if not dt > 0:
        raise ValueError("dt must be positive")
    decay, std = ou_transition(params, dt)
    return float(z * decay + std * gaussian_draw)


@njit(cache=True, nogil=True)
def _linear_recursion(z0, decay, std, draws, out):
    # out[0] = z0, out[j+1] = decay[j]*out[j] + std[j]*draws[j]
    out[0] = z0
    z = z0
    for j in range(draws.shape[0]):
        z = decay[j] * z + std[j] * draws[j]
        out[j + 1] = z
    return z


@njit(cache=True, nogil=True)
def _uniform_recursion(z0, decay, std, draws, out):
    out[0] = z0
    z = z0
    for j in range(draws.shape[0]):
        z = decay * z + std * draws[j]
        out[j + 1] = z
    return z


class OUNoise:
    """Stationary OU noise implementing :class:`StationaryNoise`."""

    def __init__(self, params: NoiseParams):
        self.params = params

    def sample_stationary(self, rng):
        return sample_stationary(self.params, rng)

    def advance(self, z0, dts, draws):
        dts = np.asarray(dts, dtype=float)
        draws = np.asarray(draws, dtype=float)
        out = np.empty(len(draws) + 1)
        if dts.ndim == 0:
            decay, std = ou_transition(self.params, dts)
            _uniform_recursion(float(z0), float(decay), float(std), draws, out)
        else:
            decay, std = ou_transition(self.params, dts)
            _linear_recursion(float(z0), decay, std, draws, out)
        return out[1:]


def path_rng(seed: int, index: int = 0, stream: int = NOISE_STREAM) -> np.random.Generator:
    """Generator for path ``index`` of the ensemble with master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index), int(stream)))))


class UniformNoiseStream:
    """Chunked generator of Z on a uniform grid for a single path.

    ``next_chunk(n)`` returns the next ``n`` grid values (excluding the current
    one); ``z`` always holds the latest value.
    """

    def __init__(self, params: NoiseParams, h: float, rng: np.random.Generator, z0: float | None = None):
        self.params = params
        self.rng = rng
        self.decay, self.std = (float(v) for v in ou_transition(params, h))
        # Z0 is always drawn so the stream layout does not depend on z0
        drawn = sample_stationary(params, rng)
        self.z = drawn if z0 is None else float(z0)

    def next_chunk(self, n: int) -> np.ndarray:
        draws = self.rng.standard_normal(n)
        out = np.empty(n + 1)
        self.z = _uniform_recursion(self.z, self.decay, self.std, draws, out)
        return out


def sample_path(params: NoiseParams, grid, seed: int, index: int = 0, z0: float | None = None) -> NoisePath:
    """Stationary OU path on ``grid`` (strictly increasing), reproducible from ``seed``.

    ``z0`` forces the initial value; the stationary draw is still consumed so
    that the increments are unchanged.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 1:
        raise ValueError("grid must be a non-empty 1-d array")
    dts = np.diff(grid)
    if np.any(dts <= 0):
        raise ValueError("grid must be strictly increasing")
    rng = path_rng(seed, index)
    drawn = sample_stationary(params, rng)
    start = drawn if z0 is None else float(z0)
    values = np.empty(len(grid))
    if len(dts):
        draws = rng.standard_normal(len(dts))
        decay, std = ou_transition(params, dts)
        _linear_recursion(start, decay, std, draws, values)
    else:
        values[0] = start
    return NoisePath(times=grid.copy(), values=values, seed=int(seed))


def stationary_autocovariance(params: NoiseParams, lag):
    return params.stationary_variance * np.exp(-params.gamma * np.abs(lag))
