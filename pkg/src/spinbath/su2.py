"""Coordinates on SU(2), Haar sampling and the control vector fields.

Two coordinate systems are used:

* quaternion components (x1, x2, x3, x4) with
  U = [[x4 + i x3, x2 + i x1], [-x2 + i x1, x4 - i x3]];
* angles (chi, phi, psi) with
  U = [[cos chi e^{-i(phi/2+psi)}, sin chi e^{-i(phi/2-psi)}],
       [-sin chi e^{i(phi/2-psi)}, cos chi e^{i(phi/2+psi)}]].

Angle convention.  Writing alpha = phi/2 + psi and beta = phi/2 - psi, the map
is periodic under (phi, psi) -> (phi - 2 pi, psi + pi) and psi -> psi + 2 pi.
Interior points are reported in the rectangle phi, psi in [0, 2 pi), on which
the Haar density is uniform in both angles.  At chi = 0 only alpha is defined:
we set psi = 0 and phi = 2 alpha in [0, 4 pi).  At chi = pi/2 only beta is
defined: we set phi = 0 and psi = -beta mod 2 pi.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi
NORM_TOL = 1e-9
# sin(chi) or cos(chi) below this is treated as the coordinate boundary
BOUNDARY_EPS = 1e-13


class QuaternionState(NamedTuple):
    x1: float
    x2: float
    x3: float
    x4: float


class AngleState(NamedTuple):
    chi: float
    phi: float
    psi: float


def as_array(q) -> np.ndarray:
    return np.asarray(q, dtype=float)


def check_normalized(q, tol: float = NORM_TOL) -> None:
    q = as_array(q)
    err = np.max(np.abs(np.sum(q**2, axis=-1) - 1.0))
    if err > tol:
        raise ValueError(f"quaternion not normalized (|q|^2 - 1 = {err:.3e})")


def angles_to_matrix(a) -> np.ndarray:
    chi, phi, psi = (np.asarray(v, dtype=float) for v in a)
    alpha = phi / 2 + psi
    beta = phi / 2 - psi
    c, s = np.cos(chi), np.sin(chi)
    U = np.empty(np.broadcast(chi, phi, psi).shape + (2, 2), dtype=complex)
    U[..., 0, 0] = c * np.exp(-1j * alpha)
    U[..., 0, 1] = s * np.exp(-1j * beta)
    U[..., 1, 0] = -s * np.exp(1j * beta)
    U[..., 1, 1] = c * np.exp(1j * alpha)
    return U


def quaternion_to_matrix(q) -> np.ndarray:
    q = as_array(q)
    check_normalized(q)
    x1, x2, x3, x4 = np.moveaxis(q, -1, 0)
    U = np.empty(q.shape[:-1] + (2, 2), dtype=complex)
    U[..., 0, 0] = x4 + 1j * x3
    U[..., 0, 1] = x2 + 1j * x1
    U[..., 1, 0] = -x2 + 1j * x1
    U[..., 1, 1] = x4 - 1j * x3
    return U


def matrix_to_quaternion(U) -> np.ndarray:
    U = np.asarray(U)
    return np.stack([U[..., 0, 1].imag, U[..., 0, 1].real, U[..., 0, 0].imag, U[..., 0, 0].real], axis=-1)


def canonical_angles(chi, phi, psi):
    """Reduce (phi, psi) to the fundamental domain described in the module docstring."""
    chi = np.asarray(chi, dtype=float)
    alpha = np.asarray(phi, dtype=float) / 2 + np.asarray(psi, dtype=float)
    beta = np.asarray(phi, dtype=float) / 2 - np.asarray(psi, dtype=float)
    return _angles_from_phases(chi, alpha, beta)


def _angles_from_phases(chi, alpha, beta):
    phi = alpha + beta
    psi = (alpha - beta) / 2
    m = np.floor(phi / TWO_PI)
    phi = phi - TWO_PI * m
    # round-off can land exactly on 2 pi; that wrap also shifts psi by pi
    over = phi >= TWO_PI
    phi = np.where(over, phi - TWO_PI, phi)
    m = m + over
    psi = np.mod(psi + np.pi * m, TWO_PI)
    psi = np.where(psi >= TWO_PI, psi - TWO_PI, psi)

    low = np.sin(chi) < BOUNDARY_EPS
    high = np.cos(chi) < BOUNDARY_EPS
    phi = np.where(low, np.mod(2 * alpha, 2 * TWO_PI), phi)
    psi = np.where(low, 0.0, psi)
    phi = np.where(high, 0.0, phi)
    psi = np.where(high, np.mod(-beta, TWO_PI), psi)
    return chi, phi, psi


def quaternion_to_angles(q) -> AngleState:
    q = as_array(q)
    x1, x2, x3, x4 = np.moveaxis(q, -1, 0)
    chi = np.arctan2(np.hypot(x1, x2), np.hypot(x3, x4))
    alpha = -np.arctan2(x3, x4)
    beta = -np.arctan2(x1, x2)
    chi, phi, psi = _angles_from_phases(chi, alpha, beta)
    if chi.ndim == 0:
        return AngleState(float(chi), float(phi), float(psi))
    return AngleState(chi, phi, psi)


def angles_to_quaternion(a) -> np.ndarray:
    chi, phi, psi = (np.asarray(v, dtype=float) for v in a)
    alpha = phi / 2 + psi
    beta = phi / 2 - psi
    c, s = np.cos(chi), np.sin(chi)
    # x4 + i x3 = cos chi e^{-i alpha},  x2 + i x1 = sin chi e^{-i beta}
    return np.stack([-s * np.sin(beta), s * np.cos(beta), -c * np.sin(alpha), c * np.cos(alpha)], axis=-1)


def transition_probability(q):
    """|<+|U|->|^2 = x1^2 + x2^2 = sin^2 chi."""
    q = as_array(q)
    return q[..., 0] ** 2 + q[..., 1] ** 2


def haar_sample(rng: np.random.Generator, size=None) -> AngleState:
    """Haar-distributed angles: sin^2 chi ~ U[0,1], phi and psi uniform."""
    rho = rng.random(size)
    alpha = TWO_PI * rng.random(size)
    beta = TWO_PI * rng.random(size)
    chi = np.arcsin(np.sqrt(rho))
    chi, phi, psi = _angles_from_phases(chi, alpha, beta)
    if np.ndim(chi) == 0:
        return AngleState(float(chi), float(phi), float(psi))
    return AngleState(chi, phi, psi)


def haar_density(chi):
    return np.sin(2 * np.asarray(chi)) / (4 * np.pi**2)


# ---------------------------------------------------------------------------
# control vector fields on (chi, phi, psi)


def control_fields(a):
    """Vector fields b0, b1, b2 at an interior point (chi not in {0, pi/2})."""
    chi, phi, _ = (np.asarray(v, dtype=float) for v in a)
    s2 = np.sin(2 * chi)
    if np.any(np.abs(s2) < 1e-12):
        raise ValueError("control fields are singular at chi in {0, pi/2}")
    cot2 = np.cos(2 * chi) / s2
    sp, cp = np.sin(phi), np.cos(phi)
    zero, one = np.zeros_like(sp), np.ones_like(sp)
    b0 = np.stack([zero, one, zero], axis=-1)
    b1 = np.stack([sp, 2 * cp * cot2, -cp / s2], axis=-1)
    b2 = np.stack([cp, -2 * sp * cot2, sp / s2], axis=-1)
    return b0, b1, b2


def _field(i):
    return lambda x: control_fields(x)[i]


def _jacobian(f, x, h):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def lie_bracket(f, g, x, h):
    """[f, g] = Dg f - Df g, with central-difference Jacobians."""
    return _jacobian(g, x, h) @ f(x) - _jacobian(f, x, h) @ g(x)


def bracket_residuals(x, fd_step: float = 1e-5) -> np.ndarray:
    """Residuals of [A0,A1] = A2, [A0,A2] = -A1, [A1,A2] = 4 A0 at one point."""
    b0, b1, b2 = (_field(i) for i in range(3))
    x = np.asarray(x, dtype=float)
    r01 = lie_bracket(b0, b1, x, fd_step) - b2(x)
    r02 = lie_bracket(b0, b2, x, fd_step) + b1(x)
    r12 = lie_bracket(b1, b2, x, fd_step) - 4 * b0(x)
    return np.array([np.linalg.norm(r01), np.linalg.norm(r02), np.linalg.norm(r12)])


def random_interior_points(rng: np.random.Generator, n: int, margin: float = 0.2) -> np.ndarray:
    chi = rng.uniform(margin, np.pi / 2 - margin, n)
    phi = rng.uniform(0, TWO_PI, n)
    psi = rng.uniform(0, TWO_PI, n)
    return np.stack([chi, phi, psi], axis=-1)


def verify_brackets(sample_points, fd_step: float = 1e-5) -> float:
    """Max bracket residual norm over ``sample_points`` (rows of (chi, phi, psi))."""
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    return float(max(bracket_residuals(p, fd_step).max() for p in pts))


def fields_determinant(a) -> np.ndarray:
    b0, b1, b2 = control_fields(a)
    return np.linalg.det(np.stack([b0, b1, b2], axis=-2))
