import math

import numpy as np
import pytest

from src.errors import DegenerateWellError
from src.field_model import (MagneticSystem, find_resonance, find_well, gradient_intensity,
                             hessian_intensity, intensity, intensity_many, magnetic_matrix,
                             resonance_order, skew_frequencies, sublevel_box, validate_assumptions)
from src.jetcalc import REAL, GradeBound, Jet


def test_resonance_orders():
    assert resonance_order((1.0, 1.0), 12) == 2
    assert resonance_order((1.0, 2.0), 12) == 3
    assert resonance_order((1.0, math.sqrt(2)), 12) == math.inf


def test_resonance_vector_is_sign_normalized():
    assert find_resonance((1.0, 2.0), 3) == (2, -1)
    assert find_resonance((1.0, 2.0), 2) is None


def test_intensity_of_quadratic_well(quadratic_well):
    """b = 1 + q1^2 + q2^2 for A = (0, q1 + q1^3/3 + q1 q2^2)"""
    rng = np.random.default_rng(0)
    points = rng.uniform(-2, 2, size=(20, 2))
    expected = 1 + np.sum(points ** 2, axis=1)
    np.testing.assert_allclose(intensity_many(quadratic_well, points), expected, rtol=1e-12)
    q = points[0]
    np.testing.assert_allclose(gradient_intensity(quadratic_well, q), 2 * q, atol=1e-7)
    np.testing.assert_allclose(hessian_intensity(quadratic_well, q), 2 * np.eye(2), atol=1e-5)


def test_magnetic_matrix_is_skew(quadratic_well):
    M = magnetic_matrix(quadratic_well, [0.4, -0.3])
    np.testing.assert_allclose(M, -M.T)
    assert abs(M[1, 0]) == pytest.approx(1 + 0.16 + 0.09)


def test_skew_frequencies_frames():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(4, 4))
    M = X - X.T
    beta, frames = skew_frequencies(M)
    assert beta[0] < beta[1]
    for b, (u, v) in zip(beta, frames):
        np.testing.assert_allclose(M @ u, -b * v, atol=1e-10)
        np.testing.assert_allclose(M @ v, b * u, atol=1e-10)
        assert np.linalg.norm(u) == pytest.approx(1.0)
        assert np.dot(u, v) == pytest.approx(0.0, abs=1e-12)


def test_frame_rotation_keeps_frame_equations():
    M = np.array([[0.0, -2.0], [2.0, 0.0]])
    beta, frames = skew_frequencies(M, rotation=(0.7,))
    u, v = frames[0]
    assert beta == pytest.approx((2.0,))
    np.testing.assert_allclose(M @ u, -2.0 * v, atol=1e-12)
    np.testing.assert_allclose(M @ v, 2.0 * u, atol=1e-12)


def test_find_well_quadratic(quadratic_well):
    well = find_well(quadratic_well, tol=1e-9)
    np.testing.assert_allclose(well.q0, [0.0, 0.0], atol=1e-8)
    assert well.b0 == pytest.approx(1.0, abs=1e-12)
    assert well.beta == pytest.approx((1.0,))
    np.testing.assert_allclose(well.hess_b, 2 * np.eye(2), atol=1e-5)
    assert not well.r0_finite


def test_find_well_blocks(blocks_4d):
    well = find_well(blocks_4d, q_init=[0.2, -0.1, 0.1, 0.3], tol=1e-9)
    np.testing.assert_allclose(well.q0, np.zeros(4), atol=1e-8)
    assert well.beta == pytest.approx((1.0, math.sqrt(2)))
    assert well.b0 == pytest.approx(1 + math.sqrt(2))
    assert well.r0 == math.inf


def test_constant_field_has_no_well(landau_system):
    with pytest.raises(DegenerateWellError):
        find_well(landau_system, q_init=[0.5, 0.5])
    well = find_well(landau_system, q_init=[0.5, 0.5], strict=False)
    report = validate_assumptions(landau_system, well)
    assert report['passed'] is False
    assert report['well_nondegenerate']['passed'] is False


def test_gauge_shift_leaves_field_unchanged(quadratic_well):
    chi = Jet.monomial((2, 1), (), (), 0, 0.7, GradeBound(0, 3, 3), REAL)
    shifted = quadratic_well.gauge_shift(chi)
    for q in ([0.1, 0.2], [-1.3, 0.4]):
        np.testing.assert_allclose(magnetic_matrix(shifted, q), magnetic_matrix(quadratic_well, q),
                                   atol=1e-12)
    a, b = find_well(quadratic_well), find_well(shifted)
    np.testing.assert_allclose(b.q0, a.q0, atol=1e-8)
    assert b.b0 == pytest.approx(a.b0, abs=1e-12)
    assert b.beta == pytest.approx(a.beta, abs=1e-10)
    np.testing.assert_allclose(b.hess_b, a.hess_b, atol=1e-7)
    for (u_b, v_b), (u_a, v_a) in zip(b.frames, a.frames):
        np.testing.assert_allclose(u_b, u_a, atol=1e-7)
        np.testing.assert_allclose(v_b, v_a, atol=1e-7)


def test_sublevel_box_and_assumptions(quadratic_well):
    level = sublevel_box(quadratic_well, 3.0)
    assert not level['empty'] and not level['touches_boundary']
    assert -1.5 < level['lower'][0] < -1.4
    assert 1.4 < level['upper'][1] < 1.5

    well = find_well(quadratic_well)
    report = validate_assumptions(quadratic_well, well, b1=3.0)
    assert report['passed'] is True
    assert report['resonance']['r0'] == 'inf'

    # b <= 100 covers the whole box
    report = validate_assumptions(quadratic_well, well, b1=100.0)
    assert report['passed'] is False
    assert report['sublevel_in_box']['passed'] is False


def test_invalid_dimension_rejected():
    with pytest.raises(ValueError):
        MagneticSystem.from_terms(3, [[], [], []])


def test_intensity_matches_single_point(quadratic_well):
    assert intensity(quadratic_well, [0.5, 0.5]) == pytest.approx(1.5)
