import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from scipy import stats

from spinbath import su2

rng_global = np.random.default_rng(123)


def random_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def wrap(d):
    return (np.asarray(d) + np.pi) % (2 * np.pi) - np.pi


def test_angles_to_matrix_examples():
    assert np.allclose(su2.angles_to_matrix((0.0, 0.0, 0.0)), np.eye(2), atol=0)
    assert np.allclose(su2.angles_to_matrix((np.pi / 2, 0.0, 0.0)), [[0, 1], [-1, 0]], atol=1e-16)


def test_angles_to_matrix_unitary():
    rng = np.random.default_rng(0)
    a = (rng.uniform(0, np.pi / 2, 100), rng.uniform(0, 2 * np.pi, 100), rng.uniform(0, 2 * np.pi, 100))
    U = su2.angles_to_matrix(a)
    for u in U:
        assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12, rtol=0)
        assert abs(np.linalg.det(u) - 1) < 1e-12


def test_quaternion_to_matrix_examples():
    assert np.array_equal(su2.quaternion_to_matrix([0, 0, 0, 1]), np.eye(2))
    t = 1.7
    U = su2.quaternion_to_matrix([0, 0, -np.sin(t / 2), np.cos(t / 2)])
    assert np.allclose(U, np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)]), atol=1e-15)


def test_quaternion_matrix_det_and_rejects_unnormalized():
    q = random_quaternions(np.random.default_rng(1), 50)
    det = np.linalg.det(su2.quaternion_to_matrix(q))
    assert np.max(np.abs(det - 1)) < 1e-12
    with pytest.raises(ValueError):
        su2.quaternion_to_matrix([0, 0, 0, 1 + 1e-8])


def test_matrix_quaternion_roundtrip():
    q = random_quaternions(np.random.default_rng(2), 20)
    assert np.allclose(su2.matrix_to_quaternion(su2.quaternion_to_matrix(q)), q, atol=1e-15)


def test_round_trip_example():
    a = su2.quaternion_to_angles(su2.angles_to_quaternion((np.pi / 4, 1.0, 0.3)))
    assert np.allclose(a, (np.pi / 4, 1.0, 0.3), atol=1e-12, rtol=0)


def test_identity_and_uncoupled_angles():
    assert su2.quaternion_to_angles([0, 0, 0, 1]) == (0.0, 0.0, 0.0)
    for t in [0.3, 2.0, 5.0, 9.0, 12.0]:
        a = su2.quaternion_to_angles([0, 0, -np.sin(t / 2), np.cos(t / 2)])
        assert a.chi == 0.0 and a.psi == 0.0
        assert a.phi == pytest.approx(t % (4 * np.pi), abs=1e-12)


def test_upper_boundary_convention():
    a = su2.quaternion_to_angles(su2.angles_to_quaternion((np.pi / 2, 0.0, 0.4)))
    assert a.chi == pytest.approx(np.pi / 2)
    assert a.phi == 0.0
    assert a.psi == pytest.approx(0.4, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    chi=st.floats(1e-6, np.pi / 2 - 1e-6),
    phi=st.floats(0, 2 * np.pi, exclude_max=True),
    psi=st.floats(0, 2 * np.pi, exclude_max=True),
)
@example(chi=0.125, phi=0.0, psi=0.25)
def test_round_trip_property(chi, phi, psi):
    a = su2.quaternion_to_angles(su2.angles_to_quaternion((chi, phi, psi)))
    assert a.chi == pytest.approx(chi, abs=1e-9)
    assert abs(wrap(a.phi - phi)) < 1e-9
    assert abs(wrap(a.psi - psi)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(
    chi=st.floats(0, np.pi / 2),
    phi=st.floats(-20, 20),
    psi=st.floats(-20, 20),
)
@example(chi=1.0, phi=-3.5e-137, psi=0.0)
def test_canonical_angles_same_group_element(chi, phi, psi):
    c = su2.canonical_angles(chi, phi, psi)
    assert np.allclose(su2.angles_to_matrix(c), su2.angles_to_matrix((chi, phi, psi)), atol=1e-11)
    assert 0 <= c[2] < 2 * np.pi


def test_angle_and_quaternion_matrices_agree():
    rng = np.random.default_rng(3)
    a = (rng.uniform(0, np.pi / 2, 100), rng.uniform(0, 2 * np.pi, 100), rng.uniform(0, 2 * np.pi, 100))
    assert np.allclose(su2.angles_to_matrix(a), su2.quaternion_to_matrix(su2.angles_to_quaternion(a)), atol=1e-12, rtol=0)


def test_twist_identification():
    a = np.array([0.6, 1.1, 0.4])
    u1 = su2.angles_to_matrix(a)
    u2 = su2.angles_to_matrix(a + [0, 2 * np.pi, -np.pi])
    u3 = su2.angles_to_matrix(a + [0, 0, 2 * np.pi])
    assert np.allclose(u1, u2, atol=1e-14) and np.allclose(u1, u3, atol=1e-14)


def test_haar_mean_rho():
    a = su2.haar_sample(np.random.default_rng(10), 100000)
    rho = np.sin(a.chi) ** 2
    se = rho.std() / np.sqrt(len(rho))
    assert abs(rho.mean() - 0.5) < 3 * se


def test_haar_marginals_uniform():
    a = su2.haar_sample(np.random.default_rng(11), 10000)
    assert stats.kstest(np.sin(a.chi) ** 2, "uniform").pvalue > 0.01
    assert stats.kstest(a.phi / (2 * np.pi), "uniform").pvalue > 0.01
    assert stats.kstest(a.psi / (2 * np.pi), "uniform").pvalue > 0.01
    for b in np.arange(1, 10) / 10:
        assert abs(np.mean(np.sin(a.chi) ** 2 <= b) - b) < 4 * np.sqrt(b * (1 - b) / 10000)


def test_haar_median_chi():
    a = su2.haar_sample(np.random.default_rng(12), 40000)
    # density of chi at pi/4 is sin(pi/2) = 1, so the median has s.e. about 0.5/sqrt(n)
    assert abs(np.median(a.chi) - np.pi / 4) < 4 * 0.5 / np.sqrt(40000)


def test_haar_left_invariance():
    rng = np.random.default_rng(13)
    a = su2.haar_sample(rng, 10000)
    g = su2.quaternion_to_matrix(random_quaternions(rng, 1)[0])
    gu = g @ su2.angles_to_matrix(a)
    b = su2.quaternion_to_angles(su2.matrix_to_quaternion(gu))
    assert stats.kstest(np.sin(b.chi) ** 2, "uniform").pvalue > 0.01
    assert stats.kstest(b.phi / (2 * np.pi), "uniform").pvalue > 0.01
    assert stats.kstest(b.psi / (2 * np.pi), "uniform").pvalue > 0.01


def test_haar_density_normalised():
    from scipy import integrate

    val, _ = integrate.quad(su2.haar_density, 0, np.pi / 2)
    assert val * (2 * np.pi) ** 2 == pytest.approx(1.0)


def test_control_field_examples():
    b0, b1, b2 = su2.control_fields((0.4, 1.3, 2.0))
    assert np.array_equal(b0, [0, 1, 0])
    _, b1, _ = su2.control_fields((np.pi / 4, 0.0, 5.0))
    assert np.allclose(b1, [0, 0, -1], atol=1e-15)
    assert su2.fields_determinant((np.pi / 4, 0.3, 0.0)) == pytest.approx(-1.0, abs=1e-12)


def test_control_fields_reject_boundary():
    with pytest.raises(ValueError):
        su2.control_fields((0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        su2.control_fields((np.pi / 2, 1.0, 1.0))


def test_determinant_identity():
    pts = su2.random_interior_points(np.random.default_rng(5), 100)
    det = su2.fields_determinant(pts.T)
    assert np.max(np.abs(det * np.sin(2 * pts[:, 0]) + 1)) < 1e-10


def test_brackets_at_random_points():
    pts = su2.random_interior_points(np.random.default_rng(6), 100)
    assert su2.verify_brackets(pts, 1e-5) < 1e-6


def test_bracket_periodicity_in_phi():
    x = np.array([0.7, 0.9, 0.1])
    f1, f2 = su2._field(1), su2._field(2)
    a = su2.lie_bracket(f1, f2, x, 1e-5)
    b = su2.lie_bracket(f1, f2, x + [0, 2 * np.pi, 0], 1e-5)
    assert np.allclose(a, b, atol=1e-8)


def test_bracket_residual_second_order():
    pts = su2.random_interior_points(np.random.default_rng(7), 5, margin=0.4)
    h = 2e-2
    r1 = np.array([su2.bracket_residuals(p, h) for p in pts]).max()
    r2 = np.array([su2.bracket_residuals(p, h / 2) for p in pts]).max()
    assert 3.5 < r1 / r2 < 4.5


def test_transition_probability():
    assert su2.transition_probability([0, 0, 0, 1]) == 0.0
    assert su2.transition_probability([0.6, 0.8, 0, 0]) == pytest.approx(1.0)
