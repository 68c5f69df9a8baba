"""Spin-1/2 driven by Ornstein-Uhlenbeck transverse-field noise.

Simulation on SU(2), Galerkin spectral gap of the generator, averaging to a
one-dimensional diffusion and first-passage-time Monte Carlo.
"""

from .noise import NoiseParams, NoisePath
from .dynamics import SimParams, Trajectory, relaxation_time, simulate

__all__ = ["NoiseParams", "NoisePath", "SimParams", "Trajectory", "relaxation_time", "simulate"]
__version__ = "0.1.0"
