"""Galerkin discretisation of the generator of (Z, y, phi, psi).

With y = -cos 2 chi and real noise, the generator splits as L = L0 + kappa L1:

    L0 = -gamma Z d/dZ + (sigma^2 / 2) d^2/dZ^2 + d/dphi
    L1 = Z [ 2 sqrt(1-y^2) sin(phi) d/dy - (2 y cos(phi) / sqrt(1-y^2)) d/dphi
             - (cos(phi) / sqrt(1-y^2)) d/dpsi ].

The Lebesgue measure dy dphi dpsi times the Gaussian law of Z is invariant, and
L1 is anti-Hermitian in that inner product.  Basis functions are

    |n, p, k> = h_n(Z) f_p(y) e^{i k phi} e^{i r psi},    f_p(y) = e^{i pi p y} / sqrt(2),

with h_n the normalised Hermite polynomials of the stationary OU law, so that
L0 |n,p,k> = (-n gamma + i k) |n,p,k>.  The psi-frequency r is conserved and
labels independent sectors.  Using Z h_n = s (sqrt(n+1) h_{n+1} + sqrt(n) h_{n-1}),
s = sigma / sqrt(2 gamma), the coupling sends k to k +- 1 with y-matrices

    k -> k + 1:  -i (a + b(k, r)),      k -> k - 1:  -i (-a + b(k, r)),

where a_qp = <f_q, sqrt(1-y^2) f_p'> and b_qp(k, r) = <f_q, (k y + r/2) / sqrt(1-y^2) f_p>.

Truncation.  Keeping |k| <= k_max on every Hermite level leaves the corner
states n = 0, k = +-k_max with a single coupling, which produces spurious
undamped eigenvalues near +-i k_max.  Levels n >= 1 therefore keep
|k| <= k_max + k_pad (default k_pad = 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

MAX_DIM = 4000
ZERO_TOL = 1e-8
QUAD_TOL = 1e-8


class QuadratureWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GalerkinSpec:
    n_max: int = 6
    p_max: int = 8
    k_max: int = 6
    r: int = 0
    quad_points: int | None = None
    k_pad: int = 1

    def __post_init__(self):
        for name in ("n_max", "p_max", "k_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.k_pad < 0:
            raise ValueError("k_pad must be >= 0")
        if self.quad_points is not None and self.quad_points < 4 * self.p_max:
            raise ValueError("quad_points must be >= 4 * p_max")

    @property
    def quad(self) -> int:
        return self.quad_points if self.quad_points is not None else max(64, 8 * self.p_max)

    def k_range(self, n: int) -> range:
        kk = self.k_max + (self.k_pad if n > 0 else 0)
        return range(-kk, kk + 1)

    @property
    def dimension(self) -> int:
        return (2 * self.p_max + 1) * sum(len(self.k_range(n)) for n in range(self.n_max + 1))

    def scaled(self, factor: int = 2) -> "GalerkinSpec":
        return GalerkinSpec(self.n_max * factor, self.p_max * factor, self.k_max * factor, self.r, None, self.k_pad)


# ---------------------------------------------------------------------------
# quadrature and y-integrals


def gauss_chebyshev_first(n: int):
    """Nodes and weights for int_{-1}^{1} g(y) / sqrt(1-y^2) dy."""
    j = np.arange(1, n + 1)
    return np.cos((2 * j - 1) * np.pi / (2 * n)), np.full(n, np.pi / n)


def gauss_chebyshev_second(n: int):
    """Nodes and weights for int_{-1}^{1} g(y) sqrt(1-y^2) dy."""
    j = np.arange(1, n + 1)
    th = j * np.pi / (n + 1)
    return np.cos(th), np.pi / (n + 1) * np.sin(th) ** 2


def fourier_basis(p, y):
    return np.exp(1j * np.pi * np.multiply.outer(np.asarray(p), np.asarray(y))) / np.sqrt(2.0)


def _a_block(ps, qs, quad):
    y, w = gauss_chebyshev_second(quad)
    fq = fourier_basis(qs, y)
    dfp = 1j * np.pi * np.asarray(ps)[:, None] * fourier_basis(ps, y)
    return (fq.conj() * w) @ dfp.T


def _cd_blocks(ps, qs, quad):
    y, w = gauss_chebyshev_first(quad)
    fq = fourier_basis(qs, y)
    fp = fourier_basis(ps, y)
    return (fq.conj() * (w * y)) @ fp.T, (fq.conj() * w) @ fp.T


def y_integrals(p_max: int, quad: int, q_max: int | None = None):
    """Matrices (A, C, D) indexed [q + q_max, p + p_max].

    A = <f_q, sqrt(1-y^2) f_p'>, C = <f_q, y / sqrt(1-y^2) f_p>, D = <f_q, f_p / sqrt(1-y^2)>,
    so that b(k, r) = k C + (r/2) D.
    """
    q_max = p_max if q_max is None else q_max
    ps = np.arange(-p_max, p_max + 1)
    qs = np.arange(-q_max, q_max + 1)
    A = _a_block(ps, qs, quad)
    C, D = _cd_blocks(ps, qs, quad)
    return A, C, D


def _checked(fn, quad):
    v1 = fn(quad)
    v2 = fn(2 * quad)
    if abs(v2 - v1) > QUAD_TOL:
        warnings.warn(f"quadrature not converged at {quad} points (change {abs(v2 - v1):.2e})", QuadratureWarning)
    return v1


def matrix_element_a(q: int, p: int, quad: int = 64) -> complex:
    """a_qp = int conj(f_q) sqrt(1-y^2) f_p' dy (Gauss-Chebyshev, second kind)."""
    return complex(_checked(lambda n: _a_block([p], [q], n)[0, 0], quad))


def matrix_element_b(q: int, p: int, k: int, r: int, quad: int = 64) -> complex:
    """b_qp(k, r) = int conj(f_q) (k y + r/2) / sqrt(1-y^2) f_p dy (Gauss-Chebyshev, first kind)."""

    def f(n):
        c, d = _cd_blocks([p], [q], n)
        return k * c[0, 0] + 0.5 * r * d[0, 0]

    return complex(_checked(f, quad))


def hermite_ladder(n_max: int, gamma: float, sigma: float) -> np.ndarray:
    """X[m, n] = <h_m, Z h_n> under the stationary law, truncated to n, m <= n_max."""
    s = sigma / np.sqrt(2.0 * gamma)
    off = s * np.sqrt(np.arange(1, n_max + 1))
    return np.diag(off, 1) + np.diag(off, -1)


# ---------------------------------------------------------------------------
# generator


def basis_labels(spec: GalerkinSpec) -> np.ndarray:
    """Rows (n, p, k) in matrix order."""
    ps = np.arange(-spec.p_max, spec.p_max + 1)
    rows = [(n, p, k) for n in range(spec.n_max + 1) for k in spec.k_range(n) for p in ps]
    return np.array(rows, dtype=int)


def build_generator(spec: GalerkinSpec, gamma: float, kappa: float, sigma: float) -> np.ndarray:
    """Dense matrix G with L(sum_i c_i e_i) = sum_j (G c)_j e_j, in the sector ``spec.r``."""
    dim = spec.dimension
    if dim > MAX_DIM:
        raise ValueError(f"Galerkin dimension {dim} exceeds the cap {MAX_DIM}")
    A, C, D = y_integrals(spec.p_max, spec.quad)
    npb = 2 * spec.p_max + 1
    X = hermite_ladder(spec.n_max + 1, gamma, sigma)
    offset = {}
    pos = 0
    for n in range(spec.n_max + 1):
        for k in spec.k_range(n):
            offset[(n, k)] = pos
            pos += npb
    G = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(npb)
    for (n, k), i in offset.items():
        G[i : i + npb, i : i + npb] = (-n * gamma + 1j * k) * eye
        if kappa == 0:
            continue
        B = k * C + 0.5 * spec.r * D
        for m in (n - 1, n + 1):
            if m < 0:
                continue
            for l, Y in ((k + 1, A + B), (k - 1, -A + B)):
                j = offset.get((m, l))
                if j is None:
                    continue
                G[j : j + npb, i : i + npb] += -1j * kappa * X[m, n] * Y
    return G


def coupled_blocks(matrix: np.ndarray) -> list[np.ndarray]:
    """Index sets of the connected components of the sparsity graph of ``matrix``."""
    pattern = csr_matrix(np.abs(matrix) > 0)
    ncomp, lab = connected_components(pattern, directed=False)
    return [np.flatnonzero(lab == c) for c in range(ncomp)]


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    gap: float
    zero_mode_error: float
    n_zero: int = field(default=0)


def spectrum(matrix: np.ndarray, zero_tol: float = ZERO_TOL) -> SpectrumResult:
    """All eigenvalues sorted by decreasing real part, the gap and the zero-mode residual.

    Decoupled blocks (for instance the two parities of n + k) are solved separately.
    """
    matrix = np.asarray(matrix)
    if not np.all(np.isfinite(matrix)):
        raise FloatingPointError("matrix has non-finite entries")
    parts = []
    for idx in coupled_blocks(matrix):
        sub = matrix[np.ix_(idx, idx)]
        try:
            parts.append(sla.eigvals(sub, check_finite=False))
        except (sla.LinAlgError, ValueError) as exc:
            raise RuntimeError(f"eigensolver failed ({exc})") from exc
    ev = np.concatenate(parts)
    ev = ev[np.lexsort((ev.imag, -ev.real))]
    near = np.abs(ev) <= zero_tol
    nonzero = ev[~near]
    gap = float(-nonzero.real.max()) if len(nonzero) else float("nan")
    return SpectrumResult(eigenvalues=ev, gap=gap, zero_mode_error=float(np.abs(ev).min()), n_zero=int(near.sum()))


# ---------------------------------------------------------------------------
# second-order perturbation theory in the Hermite ground level


def perturbative_real_part(p: int, k: int, r: int, gamma: float, kappa: float, sigma: float, q_max: int = 32, quad: int | None = None):
    """Diagonal second-order estimate of Re lambda for |0, p, k> and the size of its q-tail.

    Re lambda = -((kappa sigma)^2 / (2 (1 + gamma^2))) sum_q (|a_qp + b_qp|^2 + |a_qp - b_qp|^2),
    summed over |q| <= q_max.  The tail estimate is the change when q_max is doubled.
    For k or r nonzero the q-sum diverges slowly (b f_p is not square-integrable),
    so this diagonal value is a truncation-dependent quantity; see
    :func:`perturbative_eigenvalues` for the effective-matrix version.
    """

    def partial(qm):
        qd = quad or max(64, 8 * qm)
        A, C, D = y_integrals(abs(p), qd, q_max=qm)
        col = abs(p) + p
        a = A[:, col]
        b = k * C[:, col] + 0.5 * r * D[:, col]
        return float(np.sum(np.abs(a + b) ** 2 + np.abs(a - b) ** 2))

    s1 = partial(q_max)
    s2 = partial(2 * q_max)
    pref = -((kappa * sigma) ** 2) / (2.0 * (1.0 + gamma**2))
    return pref * s1, abs(pref * (s2 - s1))


def effective_matrix(spec: GalerkinSpec, gamma: float, kappa: float, sigma: float, k: int) -> np.ndarray:
    """Second-order effective generator on the n = 0 level of the phi-frequency ``k`` sector.

    Eliminating the n = 1, k +- 1 intermediate states (unperturbed eigenvalue
    offsets -gamma +- i) gives
    M = -((kappa sigma)^2 / (2 gamma)) [ (a+b)^H (a+b) / (gamma - i) + (-a+b)^H (-a+b) / (gamma + i) ];
    its diagonal real parts reproduce :func:`perturbative_real_part`.
    """
    A, C, D = y_integrals(spec.p_max, spec.quad)
    B = k * C + 0.5 * spec.r * D
    up = A + B
    down = -A + B
    pref = -((kappa * sigma) ** 2) / (2.0 * gamma)
    return pref * (up.conj().T @ up / (gamma - 1j) + down.conj().T @ down / (gamma + 1j))


def perturbative_eigenvalues(spec: GalerkinSpec, gamma: float, kappa: float, sigma: float, k: int) -> np.ndarray:
    """Second-order corrections to the eigenvalues ik of the n = 0, phi-frequency k level."""
    return np.linalg.eigvals(effective_matrix(spec, gamma, kappa, sigma, k))


def perturbative_gap(spec: GalerkinSpec, gamma: float, kappa: float, sigma: float, k_values=None) -> float:
    """-max Re of the nonzero second-order eigenvalues over the listed phi-frequencies."""
    k_values = range(-spec.k_max, spec.k_max + 1) if k_values is None else k_values
    best = -np.inf
    for k in k_values:
        ev = perturbative_eigenvalues(spec, gamma, kappa, sigma, k)
        if k == 0 and spec.r == 0:
            # the constant function is an exact zero mode
            ev = np.delete(ev, np.argmin(np.abs(ev)))
        best = max(best, ev.real.max())
    return float(-best)


# ---------------------------------------------------------------------------
# parameter studies


@dataclass
class GapRow:
    gamma: float
    kappa_sigma: float
    gap: float
    tstar: float

    @property
    def gap_times_tstar(self) -> float:
        return self.gap * self.tstar


def gap_scaling_study(gammas, kappa_sigma: float, spec: GalerkinSpec | None = None, kappa: float = 1.0) -> list[GapRow]:
    """Galerkin gap for each gamma at fixed kappa sigma (sigma = kappa_sigma / kappa)."""
    spec = spec or GalerkinSpec()
    sigma = kappa_sigma / kappa
    rows = []
    for g in gammas:
        res = spectrum(build_generator(spec, g, kappa, sigma))
        tstar = max((1.0 + g**2) / kappa_sigma**2, 1.0 / g)
        rows.append(GapRow(float(g), float(kappa_sigma), res.gap, tstar))
    return rows
