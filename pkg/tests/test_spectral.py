import warnings

import numpy as np
import pytest
from numpy.polynomial import hermite_e
from scipy.special import factorial, j0, j1

from spinbath import spectral as sp
from spinbath.spectral import GalerkinSpec

SMALL = GalerkinSpec(n_max=3, p_max=4, k_max=3)


def test_spec_validation_and_dimension():
    with pytest.raises(ValueError):
        GalerkinSpec(n_max=0)
    with pytest.raises(ValueError):
        GalerkinSpec(p_max=8, quad_points=20)
    s = GalerkinSpec(n_max=3, p_max=2, k_max=2, k_pad=0)
    assert s.dimension == 4 * 5 * 5
    assert GalerkinSpec().quad == 64
    assert GalerkinSpec(p_max=12).quad == 96


def test_gauss_chebyshev_rules():
    y, w = sp.gauss_chebyshev_first(20)
    assert np.sum(w * y**4) == pytest.approx(3 * np.pi / 8, rel=1e-14)
    y, w = sp.gauss_chebyshev_second(20)
    assert np.sum(w * y**2) == pytest.approx(np.pi / 8, rel=1e-14)


def test_a_zero_for_constant_function():
    for q in range(-4, 5):
        assert sp.matrix_element_a(q, 0) == 0


def test_a_against_dense_trapezoid():
    y = np.linspace(-1, 1, 1_000_001)
    f = lambda p: np.exp(1j * np.pi * p * y) / np.sqrt(2)
    integrand = f(1).conj() * np.sqrt(1 - y * y) * 1j * np.pi * 2 * f(2)
    ref = np.trapezoid(integrand, y)
    assert abs(sp.matrix_element_a(1, 2) - ref) < 1e-8


def test_integrals_against_bessel_closed_forms():
    A, C, D = sp.y_integrals(5, 64)
    ps = np.arange(-5, 6)
    om = np.pi * (ps[None, :] - ps[:, None])
    safe = np.where(om == 0, 1.0, om)
    a_ref = np.where(om == 0, np.pi / 4, np.pi * j1(safe) / (2 * safe)) * 1j * np.pi * ps[None, :]
    c_ref = 0.5j * np.pi * j1(om)
    d_ref = 0.5 * np.pi * j0(om)
    assert np.allclose(A, a_ref, atol=1e-12)
    assert np.allclose(C, c_ref, atol=1e-12)
    assert np.allclose(D, d_ref, atol=1e-12)


def test_conjugation_symmetry():
    for q, p in [(1, 2), (-3, 1), (2, -2)]:
        assert sp.matrix_element_a(-q, -p) == pytest.approx(np.conj(sp.matrix_element_a(q, p)), abs=1e-14)
        assert sp.matrix_element_b(-q, -p, 2, 1) == pytest.approx(np.conj(sp.matrix_element_b(q, p, 2, 1)), abs=1e-14)


def test_b_examples():
    for q, p in [(0, 0), (1, 3), (-2, 2)]:
        assert sp.matrix_element_b(q, p, 0, 0) == 0
        assert sp.matrix_element_b(q, p, 2, 0) == pytest.approx(2 * sp.matrix_element_b(q, p, 1, 0), abs=1e-15)
    assert abs(sp.matrix_element_b(0, 0, 1, 0)) < 1e-15


def test_quadrature_nonconvergence_flagged():
    with pytest.warns(sp.QuadratureWarning):
        sp.matrix_element_a(0, 20, quad=16)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sp.matrix_element_a(0, 5, quad=64)


def test_hermite_ladder_against_gauss_hermite():
    gamma, sigma = 0.7, 0.4
    std = sigma / np.sqrt(2 * gamma)
    x, w = hermite_e.hermegauss(40)
    w = w / w.sum()
    H = np.array([hermite_e.hermeval(x, np.eye(6)[n]) / np.sqrt(factorial(n)) for n in range(6)])
    ref = (H * w * (std * x)) @ H.T
    assert np.allclose(sp.hermite_ladder(5, gamma, sigma), ref, atol=1e-8)


def test_uncoupled_matrix_diagonal():
    s = GalerkinSpec(n_max=3, p_max=2, k_max=2)
    G = sp.build_generator(s, 1.3, 0.0, 0.1)
    assert np.count_nonzero(G - np.diag(np.diag(G))) == 0
    lab = sp.basis_labels(s)
    assert np.array_equal(np.diag(G), -lab[:, 0] * 1.3 + 1j * lab[:, 2])


def test_uncoupled_eigenvalues_multiset():
    s = GalerkinSpec(n_max=3, p_max=2, k_max=2, k_pad=0)
    res = sp.spectrum(sp.build_generator(s, 1.0, 0.0, 0.1))
    expected = np.array([-n + 1j * k for n in range(4) for k in range(-2, 3) for _ in range(5)])
    key = lambda v: np.lexsort((v.imag, v.real))
    assert np.max(np.abs(res.eigenvalues[key(res.eigenvalues)] - expected[key(expected)])) < 1e-10


def test_constant_function_is_in_kernel():
    G = sp.build_generator(SMALL, 1.0, 1.0, 0.3)
    lab = sp.basis_labels(SMALL)
    j = np.flatnonzero((lab == [0, 0, 0]).all(axis=1))[0]
    assert np.all(G[:, j] == 0)


def test_first_order_vanishes_on_ground_level():
    G = sp.build_generator(SMALL, 1.0, 1.0, 0.3)
    n0 = sp.basis_labels(SMALL)[:, 0] == 0
    block = G[np.ix_(n0, n0)]
    assert np.count_nonzero(block - np.diag(np.diag(block))) == 0


def test_functions_of_noise_alone_are_exact_eigenfunctions():
    # the coupling only differentiates spin variables, so h_n(Z) has eigenvalue -n gamma
    gamma = 0.6
    res = sp.spectrum(sp.build_generator(SMALL, gamma, 1.0, 0.3))
    for n in range(1, SMALL.n_max + 1):
        assert np.min(np.abs(res.eigenvalues + n * gamma)) < 1e-8
    assert res.gap <= gamma + 1e-8


def test_dimension_cap():
    with pytest.raises(ValueError):
        sp.build_generator(GalerkinSpec(n_max=20, p_max=20, k_max=10), 1, 1, 0.1)


@pytest.fixture(scope="module")
def coupled_spectrum():
    return sp.spectrum(sp.build_generator(GalerkinSpec(n_max=3, p_max=6, k_max=3), 1.0, 1.0, 0.05))


def test_single_zero_mode_and_stability(coupled_spectrum):
    res = coupled_spectrum
    assert res.n_zero == 1
    assert res.zero_mode_error < 1e-8
    assert res.eigenvalues.real.max() <= 1e-8
    assert np.all(res.eigenvalues[1:].real < 0)


def test_spectrum_closed_under_conjugation(coupled_spectrum):
    ev = coupled_spectrum.eigenvalues
    d = np.abs(ev[:, None] - ev.conj()[None, :]).min(axis=1)
    assert d.max() < 1e-8


def test_spectrum_parity_blocks():
    G = sp.build_generator(SMALL, 1.0, 1.0, 0.3)
    blocks = sp.coupled_blocks(G)
    assert len(blocks) >= 2
    full = np.linalg.eigvals(G)
    split = sp.spectrum(G).eigenvalues
    d = np.abs(full[:, None] - split[None, :]).min(axis=1)
    assert d.max() < 1e-9


def test_spectrum_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        sp.spectrum(np.array([[np.nan]]))


def test_gap_stable_under_truncation_doubling():
    base = GalerkinSpec(n_max=3, p_max=6, k_max=3)
    g1 = sp.spectrum(sp.build_generator(base, 1.0, 1.0, 0.05)).gap
    g2 = sp.spectrum(sp.build_generator(base.scaled(2), 1.0, 1.0, 0.05)).gap
    assert abs(g1 - g2) / g2 < 0.05


def test_perturbative_real_part_signs():
    val, _ = sp.perturbative_real_part(0, 0, 0, 1.0, 1.0, 0.05)
    assert val == 0
    for p, k, r in [(1, 0, 0), (0, 1, 0), (2, -1, 0), (0, 0, 1), (-3, 2, 2)]:
        val, tail = sp.perturbative_real_part(p, k, r, 1.0, 1.0, 0.05, q_max=16)
        assert val < 0
        assert tail >= 0


def test_effective_matrix_diagonal_matches_diagonal_formula():
    s = GalerkinSpec(n_max=1, p_max=6, k_max=2)
    M = sp.effective_matrix(s, 1.5, 1.0, 0.05, k=1)
    for p in (-2, 0, 3):
        val, _ = sp.perturbative_real_part(p, 1, 0, 1.5, 1.0, 0.05, q_max=6, quad=s.quad)
        assert M[p + 6, p + 6].real == pytest.approx(val, rel=1e-12)


def test_perturbative_k0_sector_is_legendre_operator():
    # at k = r = 0 the effective operator is (kappa sigma)^2/(1+gamma^2) * d/dy (1-y^2) d/dy,
    # with eigenvalues -l(l+1).  Even l have periodic eigenfunctions and converge fast in the
    # Fourier basis; odd l converge slowly from above.
    ks, g = 0.05, 1.0
    odd = []
    for p in (6, 12, 24):
        s = GalerkinSpec(n_max=1, p_max=p, k_max=1)
        ev = np.sort(-sp.perturbative_eigenvalues(s, g, 1.0, ks, 0).real * (1 + g * g) / ks**2)
        assert abs(ev[0]) < 1e-10
        odd.append(ev[1])
    assert ev[2] == pytest.approx(6.0, abs=0.01)
    assert ev[4] == pytest.approx(20.0, abs=0.2)
    assert 2.0 < odd[2] < odd[1] < odd[0]


def test_perturbation_agrees_with_galerkin():
    s = GalerkinSpec(n_max=3, p_max=6, k_max=3)
    rel = []
    for ks in (0.02, 0.01):
        g = sp.spectrum(sp.build_generator(s, 1.0, 1.0, ks)).gap
        pg = sp.perturbative_gap(s, 1.0, 1.0, ks)
        rel.append(abs(g - pg) / pg)
    assert rel[1] < 0.1
    assert rel[1] < rel[0]


def test_gap_scaling_band():
    rows = sp.gap_scaling_study([0.25, 1.0, 4.0], 0.05, GalerkinSpec(n_max=3, p_max=6, k_max=3))
    gt = np.array([r.gap_times_tstar for r in rows])
    assert gt.max() / gt.min() <= 4
    assert rows[1].tstar == pytest.approx(800.0)


def test_gap_bounded_by_noise_rate_for_slow_noise():
    s = GalerkinSpec(n_max=6, p_max=4, k_max=3)
    for g in (0.001, 0.005):
        assert sp.spectrum(sp.build_generator(s, g, 1.0, 0.05)).gap <= g + 1e-8


def test_gap_decay_for_fast_noise():
    # for gamma >> 1 the gap behaves like (kappa sigma)^2 / (1 + gamma^2), i.e. gamma^-2
    s = GalerkinSpec(n_max=3, p_max=6, k_max=3)
    g4 = sp.spectrum(sp.build_generator(s, 4.0, 1.0, 0.05)).gap
    g8 = sp.spectrum(sp.build_generator(s, 8.0, 1.0, 0.05)).gap
    assert 3.0 < g4 / g8 < 5.0
