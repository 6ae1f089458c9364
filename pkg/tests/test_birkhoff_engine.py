import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import linalg

from src.birkhoff_engine import (birkhoff_reduce, expand_fstar, homological_solve, quadratic_part,
                                 resonant_split, star_power_table, star_rewrite, well_reduce,
                                 williamson)
from src.config import RunConfig
from src.errors import DegenerateWellError, ResonanceError, ValuationError
from src.jetcalc import (COMPLEX, OSCILLATOR_AD, REAL, GradeBound, Jet, exp_ad, grade_split, hbar_bracket,
                         oscillator)
from src.pipeline import NormalFormPipeline


def constant_betas(values, bound):
    return tuple(Jet.constant(float(v), 0, 0, bound, REAL) for v in values)


def test_star_power_table():
    """I*I = I^2 - hbar^2"""
    T = star_power_table(2)
    assert T == ((Fraction(1),), (Fraction(0), Fraction(1)), (Fraction(-1), Fraction(0), Fraction(1)))


def test_star_rewrite_of_quartic():
    """|z|^4 = I*I + hbar^2"""
    bound = GradeBound(4, 0, 4)
    kappa = Jet.monomial((), (2,), (2,), 0, 1.0, bound, COMPLEX)
    table = star_rewrite(kappa)
    assert set(table) == {(0, (2,)), (2, (0,))}
    assert complex(table[(0, (2,))].constant_term()) == pytest.approx(1.0)
    assert complex(table[(2, (0,))].constant_term()) == pytest.approx(1.0)
    assert expand_fstar(table, 1, bound).allclose(kappa, 1e-14)


def test_star_rewrite_rejects_nonresonant():
    kappa = Jet.monomial((), (2,), (1,), 0, 1.0, GradeBound.total(4), COMPLEX)
    with pytest.raises(ValueError):
        star_rewrite(kappa)


def test_homological_solve_inverts_the_oscillator_action():
    bound = GradeBound.total(5)
    betas = constant_betas((1.0, math.sqrt(2)), bound)
    offres = (Jet.monomial((), (2, 0), (0, 1), 0, 0.5, bound)
              + Jet.monomial((), (0, 0), (1, 2), 1, -0.25j, bound))
    tau = homological_solve(offres, betas)
    image = tau.zero_like()
    for j, b in enumerate(betas):
        image = image + hbar_bracket(oscillator(j, 0, 2, bound), tau).scale(b.constant_term())
    assert image.allclose(offres, 1e-12)


def test_homological_solve_reports_resonance():
    bound = GradeBound.total(4)
    betas = constant_betas((1.0, 2.0), bound)
    offres = Jet.monomial((), (2, 0), (0, 1), 0, 1.0, bound)
    with pytest.raises(ResonanceError) as info:
        homological_solve(offres, betas)
    assert info.value.vector == (2, -1)


def test_homological_solve_rejects_resonant_input():
    bound = GradeBound.total(4)
    resonant = Jet.monomial((), (1, 1), (1, 1), 0, 1.0, bound)
    with pytest.raises(ValueError):
        homological_solve(resonant, constant_betas((1.0, 2.0), bound))


def test_resonant_split_partitions():
    bound = GradeBound.total(4)
    R = (Jet.monomial((), (1,), (1,), 1, 2.0, bound) + Jet.monomial((), (3,), (0,), 0, 1.0, bound))
    K, offres = resonant_split(R)
    assert (K + offres).allclose(R, 0.0)
    assert all(key.alpha == key.gamma for key in K)
    assert all(key.alpha != key.gamma for key in offres)


def test_resonant_split_keeps_tiny_terms():
    bound = GradeBound.total(4)
    tiny = Jet.monomial((), (2,), (1,), 0, 1e-13, bound)
    R = Jet.monomial((), (1,), (1,), 0, 1.0, bound) + tiny
    K, offres = resonant_split(R)
    assert (K + offres - R).is_zero
    assert offres.allclose(tiny, 0.0)
    assert K.allclose(R - tiny, 0.0)


def test_birkhoff_reduce_detects_low_order_resonance():
    bound = GradeBound.total(4)
    like = Jet.zero(0, 2, bound)
    betas = constant_betas((1.0, 2.0), bound)
    symbol = quadratic_part(betas, like) + Jet.monomial((), (3, 0), (0, 0), 0, 0.1, bound)
    with pytest.raises(ResonanceError) as info:
        birkhoff_reduce(symbol, betas, 4)
    assert info.value.vector == (2, -1)


def test_birkhoff_reduce_rejects_quadratic_perturbation():
    bound = GradeBound.total(4)
    betas = constant_betas((1.0,), bound)
    like = Jet.zero(0, 1, bound)
    symbol = quadratic_part(betas, like) + Jet.monomial((), (2,), (0,), 0, 0.1, bound)
    with pytest.raises(ValuationError):
        birkhoff_reduce(symbol, betas, 4)


@pytest.fixture(scope='module')
def toy_reduction():
    """One oscillator over a w-plane, beta_hat = 1 + y."""
    bound = GradeBound.total(5)
    y = Jet.variable(0, 2, 1, bound)
    z = Jet.variable(2, 2, 1, bound)
    zbar = Jet.variable(3, 2, 1, bound)
    w_bound = GradeBound(0, 5, 5)
    beta_hat = (1 + Jet.variable(0, 2, 0, w_bound, REAL),)
    x = z + zbar
    gamma = (x * x * x).scale(0.1) + (y * z * z * zbar * zbar).scale(0.2) + (z * z * z * zbar).scale(0.05)
    gamma = gamma + gamma.conj()
    symbol = quadratic_part(beta_hat, gamma) + gamma
    return symbol, beta_hat, birkhoff_reduce(symbol, beta_hat, 5)


def test_birkhoff_reduce_normalizes_below_r(toy_reduction):
    symbol, beta_hat, nf = toy_reduction
    assert nf.residual < 1e-10
    assert all(key.alpha == key.gamma for key in nf.kappa)
    I = oscillator(0, 2, 1, nf.kappa.bound)
    assert hbar_bracket(I, nf.kappa).max_abs() < 1e-12
    assert all(key.phase_degree >= 5 for key in nf.rho)
    assert [s['degree'] for s in nf.stages] == [3, 4]


def test_birkhoff_reduce_conjugation_identity(toy_reduction):
    symbol, _, nf = toy_reduction
    assert exp_ad(nf.tau, symbol).allclose(nf.transformed, 1e-10)
    # tau solves away nothing resonant
    assert all(key.alpha != key.gamma for key in nf.tau)


def test_oscillator_action_constant():
    assert OSCILLATOR_AD == -2j


def test_williamson_identity():
    result = williamson(2 * np.eye(2))
    assert result.nu == pytest.approx((2.0,))
    np.testing.assert_allclose(result.linear_map, np.eye(2), atol=1e-12)


def test_williamson_diagonal_blocks():
    result = williamson(np.diag([1.0, 4.0, 9.0, 1.0]))
    assert result.nu == pytest.approx((2.0, 3.0))
    M = result.linear_map
    J = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)
    np.testing.assert_allclose(M.T @ J @ M, J, atol=1e-10)
    np.testing.assert_allclose(M.T @ np.diag([1.0, 4.0, 9.0, 1.0]) @ M, np.diag([2.0, 2.0, 3.0, 3.0]),
                               atol=1e-10)


def pair_form(n):
    return np.kron(np.eye(n), np.array([[0.0, -1.0], [1.0, 0.0]]))


def random_spd(rng, dim):
    A = rng.normal(size=(dim, dim))
    return A.T @ A + np.eye(dim)


def test_williamson_random_positive_form():
    rng = np.random.default_rng(5)
    J = pair_form(2)
    for _ in range(10):
        Q = random_spd(rng, 4)
        result = williamson(Q)
        nu1, nu2 = result.nu
        assert 0 < nu1 <= nu2
        M = result.linear_map
        np.testing.assert_allclose(M.T @ J @ M, J, atol=1e-10)
        np.testing.assert_allclose(M.T @ Q @ M, np.diag([nu1, nu1, nu2, nu2]), atol=1e-10)


def test_williamson_invariant_under_symplectic_congruence():
    rng = np.random.default_rng(13)
    J = pair_form(2)
    for _ in range(10):
        Q = random_spd(rng, 4)
        H = rng.normal(scale=0.2, size=(4, 4))
        S = linalg.expm(J @ (H + H.T))
        np.testing.assert_allclose(S.T @ J @ S, J, atol=1e-10)
        assert williamson(S.T @ Q @ S).nu == pytest.approx(williamson(Q).nu, rel=1e-9)


def test_williamson_rejects_indefinite():
    with pytest.raises(DegenerateWellError):
        williamson(np.diag([1.0, -1.0]))


def test_well_reduce_anharmonic_oscillator():
    """eta^2 + y^2 + y^4: the Rayleigh-Schroedinger series 1 + 3h/4 - 21h^2/16 in units of hbar"""
    bound = GradeBound(0, 6, 6)
    y = Jet.variable(0, 2, 0, bound, REAL)
    eta = Jet.variable(1, 2, 0, bound, REAL)
    symbol = 1 + y * y + eta * eta + y * y * y * y
    expansion = well_reduce(symbol, 6)
    assert expansion.b0 == pytest.approx(1.0)
    assert expansion.nu == pytest.approx((1.0,))
    ground = expansion.level((0,))
    assert ground[0] == pytest.approx(1.0)
    assert ground[2] == pytest.approx(1.0, abs=1e-10)
    assert ground[4] == pytest.approx(0.75, abs=1e-10)
    assert ground[6] == pytest.approx(-21 / 16, abs=1e-9)
    excited = expansion.level((1,))
    assert excited[2] == pytest.approx(3.0, abs=1e-10)
    assert excited[4] == pytest.approx(15 / 4, abs=1e-10)


def test_well_reduce_cubic_term_keeps_integer_powers():
    """eta^2 + y^2 + y^3: no half-integer powers of hbar, second-order shift -(30m^2 + 30m + 11)/16"""
    bound = GradeBound(0, 6, 6)
    y = Jet.variable(0, 2, 0, bound, REAL)
    eta = Jet.variable(1, 2, 0, bound, REAL)
    symbol = 1 + y * y + eta * eta + y * y * y
    expansion = well_reduce(symbol, 6)
    for m, shift in (((0,), -11 / 16), ((1,), -71 / 16)):
        level = expansion.level(m)
        assert all(abs(level[k]) < 1e-10 for k in (1, 3, 5))
        assert level[2] == pytest.approx(2 * m[0] + 1, abs=1e-10)
        assert level[4] == pytest.approx(shift, abs=1e-10)


def assert_normal_form(symbol, nf):
    """Reconstruction identity, kappa resonant and commuting with every oscillator, rho of valuation >= r."""
    source = nf.H0 + grade_split(symbol - nf.H0, 3)[1]
    assert nf.residual < 1e-10
    assert (exp_ad(nf.tau, source) - nf.transformed).max_abs() < 1e-10
    for j in range(nf.kappa.nz):
        I = oscillator(j, nf.kappa.nw, nf.kappa.nz, nf.kappa.bound)
        assert hbar_bracket(I, nf.kappa).max_abs() < 1e-10
    assert all(key.alpha == key.gamma for key in nf.kappa)
    assert all(key.phase_degree >= nf.r for key in nf.rho)


@pytest.fixture(scope='module')
def cubic_reduction():
    return NormalFormPipeline(RunConfig.from_preset('quadratic-well-2d')).reduction


def test_cubic_field_normal_form_r4(cubic_reduction):
    symbol = cubic_reduction.hamiltonian.jet
    nf = birkhoff_reduce(symbol, cubic_reduction.beta_hat, 4)
    assert_normal_form(symbol, nf)
    assert [s['degree'] for s in nf.stages] == [3]


@pytest.mark.slow
def test_cubic_field_normal_form_r6():
    data = RunConfig.from_preset('quadratic-well-2d').to_dict()
    data['truncation'].update({'z_order': 5, 'w_order': 3, 'r': 6})
    pipeline = NormalFormPipeline(RunConfig.from_dict(data))
    nf = pipeline.normal_form
    assert nf.r == 6
    assert_normal_form(pipeline.reduction.hamiltonian.jet, nf)
    assert [s['degree'] for s in nf.stages] == [3, 4, 5]


@pytest.mark.slow
def test_nonresonant_4d_normal_form():
    pipeline = NormalFormPipeline(RunConfig.from_preset('blocks-4d'))
    assert pipeline.well.beta == pytest.approx((1.0, math.sqrt(2)), abs=1e-8)
    nf = pipeline.normal_form
    assert nf.r == 4
    assert nf.kappa.nz == 2
    assert_normal_form(pipeline.reduction.hamiltonian.jet, nf)
