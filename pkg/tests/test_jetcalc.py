import numpy as np
import sympy
import pytest

from src.errors import JetDimensionError, SingularJetError, ValuationError
from src.jetcalc import (COMPLEX, OSCILLATOR_AD, REAL, GradeBound, Jet, JetMap, complex_convert,
                         exp_ad, grade_split, hbar_bracket, jet_compose, jet_invert, jet_power,
                         moyal_bracket, moyal_star, oscillator, oscillator_action, poisson_bracket,
                         w_to_phase)

BOUND = GradeBound.total(6)


def random_monomial(rng, nw, nz, max_total, bound):
    while True:
        w = tuple(int(v) for v in rng.integers(0, 3, nw))
        alpha = tuple(int(v) for v in rng.integers(0, 3, nz))
        gamma = tuple(int(v) for v in rng.integers(0, 3, nz))
        l = int(rng.integers(0, 2))
        if 0 < sum(w) + sum(alpha) + sum(gamma) + 2 * l <= max_total:
            coeff = complex(rng.normal(), rng.normal())
            return Jet.monomial(w, alpha, gamma, l, coeff, bound)


def random_jet(rng, nw, nz, terms, max_total, bound):
    jet = Jet.zero(nw, nz, bound)
    for _ in range(terms):
        jet = jet + random_monomial(rng, nw, nz, max_total, bound)
    return jet


def test_oscillator_star_square_exact():
    """I * I = I^2 - hbar^2 for every oscillator, with exact coefficients"""
    for j in range(2):
        I = oscillator(j, 0, 2, BOUND, COMPLEX, exact=True)
        h = Jet.hbar(0, 2, BOUND, COMPLEX, exact=True)
        assert (moyal_star(I, I) - (I * I - h * h)).is_zero


def test_canonical_commutators():
    """[x, xi] = i hbar in the real basis and [z, zbar] = 2 hbar in the complex one"""
    x = Jet.variable(0, 0, 1, BOUND, REAL, exact=True)
    xi = Jet.variable(1, 0, 1, BOUND, REAL, exact=True)
    expected = Jet.hbar(0, 1, BOUND, REAL, exact=True).scale(sympy.I)
    assert (moyal_bracket(x, xi) - expected).is_zero

    z = Jet.variable(0, 0, 1, BOUND, COMPLEX)
    zbar = Jet.variable(1, 0, 1, BOUND, COMPLEX)
    assert moyal_bracket(z, zbar).allclose(Jet.hbar(0, 1, BOUND).scale(2))

    # w pair (y, eta): same normalization as (x, xi)
    y = Jet.variable(0, 2, 0, BOUND, REAL)
    eta = Jet.variable(1, 2, 0, BOUND, REAL)
    assert moyal_bracket(y, eta).allclose(Jet.hbar(2, 0, BOUND, REAL).scale(1j))


def test_oscillator_action_on_random_monomials():
    """(i/hbar)[|z_j|^2, m] = OSCILLATOR_AD (alpha_j - gamma_j) m"""
    rng = np.random.default_rng(7)
    bound = GradeBound.total(8)
    for _ in range(200):
        m = random_monomial(rng, 2, 2, 6, bound)
        key = next(iter(m))
        for j in range(2):
            I = oscillator(j, 2, 2, bound)
            shift = key.alpha[j] - key.gamma[j]
            assert hbar_bracket(I, m).allclose(m.scale(OSCILLATOR_AD * shift), 1e-12)
            assert oscillator_action(m, j).allclose(m.scale(shift), 1e-12)


def test_moyal_associativity_and_jacobi():
    rng = np.random.default_rng(11)
    bound = GradeBound.total(6)
    for _ in range(50):
        a, b, c = (random_jet(rng, 2, 1, 3, 3, bound) for _ in range(3))
        left = moyal_star(moyal_star(a, b), c)
        right = moyal_star(a, moyal_star(b, c))
        scale = max(1.0, left.max_abs())
        assert left.allclose(right, 1e-12 * scale)

        jacobi = (moyal_bracket(a, moyal_bracket(b, c)) + moyal_bracket(b, moyal_bracket(c, a))
                  + moyal_bracket(c, moyal_bracket(a, b)))
        assert jacobi.max_abs() <= 1e-12 * scale


def classical(jet):
    return jet.filter(lambda key: key.l == 0)


def test_poisson_bracket_antisymmetry_and_leibniz():
    rng = np.random.default_rng(23)
    bound = GradeBound.total(8)
    for _ in range(20):
        a, b, c = (random_jet(rng, 2, 1, 3, 2, bound) for _ in range(3))
        ab = poisson_bracket(a, b)
        assert (ab + poisson_bracket(b, a)).max_abs() < 1e-12

        leibniz = poisson_bracket(a, b * c) - (ab * c + b * poisson_bracket(a, c))
        assert leibniz.max_abs() <= 1e-12 * max(1.0, ab.max_abs())


def test_poisson_bracket_is_classical_limit():
    """hbar_bracket = {a, b} + O(hbar^2); the hbar^1 part of a * b is {a, b} hbar / 2i"""
    rng = np.random.default_rng(29)
    bound = GradeBound.total(6)
    for basis_nw, basis_nz in ((2, 1), (0, 2)):
        for _ in range(10):
            a = classical(random_jet(rng, basis_nw, basis_nz, 4, 3, bound))
            b = classical(random_jet(rng, basis_nw, basis_nz, 4, 3, bound))
            pb = poisson_bracket(a, b)
            rest = hbar_bracket(a, b) - pb
            assert all(key.l >= 2 for key in rest)

            correction = moyal_star(a, b) - a * b
            assert all(key.l >= 1 for key in correction)
            first = correction.filter(lambda key: key.l == 1)
            assert first.allclose(pb.shift_hbar(1).scale(-0.5j), 1e-12)


def test_star_product_preserves_total_degree():
    """An hbar^l term of a * b costs 2l derivatives, so no term exceeds deg a + deg b."""
    rng = np.random.default_rng(31)
    bound = GradeBound.total(8)
    for _ in range(20):
        a = random_jet(rng, 2, 1, 3, 3, bound)
        b = random_jet(rng, 2, 1, 3, 3, bound)
        top = max(key.total_degree for key in a) + max(key.total_degree for key in b)
        assert all(key.total_degree <= top for key in moyal_star(a, b))


def test_bracket_of_real_symbols_is_real():
    rng = np.random.default_rng(37)
    bound = GradeBound.total(6)
    for _ in range(20):
        a = random_jet(rng, 2, 1, 4, 3, bound).real_part()
        b = random_jet(rng, 2, 1, 4, 3, bound).real_part()
        assert a.is_real_symbol() and b.is_real_symbol()
        assert hbar_bracket(a, b).is_real_symbol(1e-12)
        assert poisson_bracket(a, b).is_real_symbol(1e-12)


def test_exp_ad_inverse():
    """exp_ad(tau) undoes exp_ad(-tau) on the whole bound"""
    rng = np.random.default_rng(41)
    bound = GradeBound.total(7)
    for _ in range(10):
        tau = random_jet(rng, 0, 1, 6, 4, bound).filter(lambda key: key.phase_degree >= 3)
        a = random_jet(rng, 0, 1, 5, 4, bound)
        back = exp_ad(tau, exp_ad(tau.scale(-1), a))
        assert back.allclose(a, 1e-10 * max(1.0, a.max_abs()))


def test_complex_basis_star_matches_real_basis():
    rng = np.random.default_rng(3)
    bound = GradeBound.total(6)
    a = random_jet(rng, 0, 1, 3, 3, bound)
    b = random_jet(rng, 0, 1, 3, 3, bound)
    a_real, b_real = complex_convert(a, REAL), complex_convert(b, REAL)
    product = complex_convert(moyal_star(a_real, b_real), COMPLEX)
    assert product.allclose(moyal_star(a, b), 1e-12 * max(1.0, product.max_abs()))


def test_truncation_respects_bound():
    bound = GradeBound(4, 4, 4)
    x = Jet.variable(0, 0, 1, bound, REAL)
    high = x * x * x * x * x
    assert high.is_zero
    part_low, part_high = grade_split(x * x + x * x * x, 3)
    assert len(part_low) == 1 and len(part_high) == 1


def test_invert_and_power():
    bound = GradeBound.total(5)
    y = Jet.variable(0, 2, 0, bound, REAL)
    u = 1 + y + y * y.scale(0.5)
    assert (u * jet_invert(u)).allclose(u.constant_like(1), 1e-12)
    root = jet_power(u, 0.5)
    assert (root * root).allclose(u, 1e-12)
    with pytest.raises(SingularJetError):
        jet_invert(y)


def test_exp_ad_rejects_low_valuation():
    z = Jet.variable(0, 0, 1, BOUND)
    zbar = Jet.variable(1, 0, 1, BOUND)
    with pytest.raises(ValuationError):
        exp_ad(z * zbar, z)


def test_exp_ad_of_cubic_generator_is_bracket_series():
    bound = GradeBound.total(5)
    z = Jet.variable(0, 0, 1, bound)
    zbar = Jet.variable(1, 0, 1, bound)
    tau = (z * z * zbar).scale(0.3j)
    a = z * zbar
    first = a + hbar_bracket(tau, a)
    result = exp_ad(tau, a)
    # tau commutes with its own bracket image, so the series stops after one term
    assert result.allclose(first, 1e-14)


def test_dimension_errors():
    a = Jet.variable(0, 2, 0, BOUND, REAL)
    b = Jet.variable(0, 2, 1, BOUND, REAL)
    with pytest.raises(JetDimensionError):
        a + b
    with pytest.raises(ValuationError):
        a.divide_hbar()


def test_jetmap_inverse_and_compose():
    bound = GradeBound.total(4)
    y = Jet.variable(0, 2, 0, bound, REAL)
    eta = Jet.variable(1, 2, 0, bound, REAL)
    m = JetMap((y + y * y + (y * eta).scale(0.5), eta - y * y * y), 'w', 'q')
    inverse = m.inverse()
    roundtrip = inverse.compose(m, bound)
    assert roundtrip[0].allclose(y, 1e-12)
    assert roundtrip[1].allclose(eta, 1e-12)
    np.testing.assert_allclose(m.jacobian().real, np.eye(2))


def test_compose_and_evaluate_agree():
    bound = GradeBound.total(6)
    y = Jet.variable(0, 2, 0, bound, REAL)
    eta = Jet.variable(1, 2, 0, bound, REAL)
    f = y * y * eta + eta.scale(2)
    m = JetMap((y.scale(2), y + eta), 'w', 'w')
    g = jet_compose(f, m)
    rng = np.random.default_rng(19)
    for point in rng.uniform(-0.6, 0.6, (8, 2)):
        inner = m.evaluate(point)
        assert abs(g.evaluate(point) - f.evaluate(inner.real)) < 1e-12


def test_w_to_phase_pairs_coordinates():
    bound = GradeBound.total(4)
    y = Jet.variable(0, 2, 0, bound, REAL)
    eta = Jet.variable(1, 2, 0, bound, REAL)
    moved = w_to_phase(y * y + eta, GradeBound(4, 0, 4))
    assert moved.nw == 0 and moved.nz == 1 and moved.basis == REAL
    assert moved.coefficient(((), (2,), (0,), 0)) == 1
    assert moved.coefficient(((), (0,), (1,), 0)) == 1


def test_dict_round_trip_preserves_bound():
    jet = Jet.monomial((1, 0), (1,), (0,), 1, 2 - 1j, GradeBound(5, 3, 6))
    restored = Jet.from_dict(jet.to_dict())
    assert restored == jet
    assert restored.bound == jet.bound
