"""
Formal Birkhoff normal form in the (w, z, zbar, hbar) jet algebra

birkhoff_reduce conjugates H0 + gamma by exp((i/hbar) ad_tau) degree by
degree until everything below phase degree r commutes with every |z_j|^2.
The same engine runs the second stage in the w-variables (well_reduce),
after a Williamson normalization of the Hessian at the minimum.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy
from scipy import linalg

from .config import Config
from .errors import (BoundOverflowError, DegenerateWellError, InternalConsistencyError,
                     ResonanceError, ValuationError)
from .field_model import find_resonance
from .jetcalc import (COMPLEX, OSCILLATOR_AD, REAL, GradeBound, Jet, JetMap, MultiIndex,
                      complex_convert, embed, exp_ad, grade_split, jet_compose, jet_invert,
                      moyal_star, oscillator, w_to_phase)

logger = logging.getLogger(__name__)

# (l, m) -> w-jet multiplying I_1^{*m_1} * ... * I_n^{*m_n} hbar^l
FStarTable = Dict[Tuple[int, Tuple[int, ...]], Jet]


@dataclass(frozen=True, eq=False)
class NormalFormResult:
    tau: Jet
    kappa: Jet
    rho: Jet
    r: int
    fstar: FStarTable
    H0: Jet
    beta_hat: Tuple[Jet, ...]
    stages: List[Dict[str, Any]] = field(default_factory=list)
    residual: float = 0.0

    @property
    def transformed(self) -> Jet:
        return self.H0 + self.kappa + self.rho


@dataclass(frozen=True, eq=False)
class WilliamsonResult:
    nu: Tuple[float, ...]
    linear_map: np.ndarray
    residual: float = 0.0


@dataclass(frozen=True, eq=False)
class WellExpansion:
    """Second-stage output: levels mu_m(hbar) = sum_k coeffs[k] hbar^(k/2)."""

    b0: float
    c0: float
    williamson: WilliamsonResult
    normal_form: NormalFormResult
    central: Dict[int, float]
    order: int

    @property
    def nu(self) -> Tuple[float, ...]:
        return self.williamson.nu

    def level(self, m: Sequence[int]) -> Dict[int, float]:
        """Coefficients of hbar^(k/2), k = 0..order, for the oscillator state m."""
        coeffs = {k: 0.0 for k in range(self.order + 1)}
        coeffs[0] = self.b0
        for (l, p), jet in self.normal_form.fstar.items():
            value = complex(jet.constant_term()).real
            if value == 0.0:
                continue
            k = 2 * (sum(p) + l)
            if k > self.order:
                continue
            coeffs[k] += value * math.prod((2 * mj + 1) ** pj for mj, pj in zip(m, p))
        return coeffs


# ---------------------------------------------------------------------------
# Resonant split and homological equation
# ---------------------------------------------------------------------------

def resonant_split(R: Jet) -> Tuple[Jet, Jet]:
    """(alpha == gamma part, R minus it). The split is on integer exponents, so it is exact."""
    K = R.filter(lambda key: key.alpha == key.gamma)
    return K, R - K


def _frequency_scale(beta_hat: Sequence[Jet]) -> float:
    return max(1.0, float(np.linalg.norm([complex(b.constant_term()).real for b in beta_hat])))


def _divisor(delta: Sequence[int], beta_hat: Sequence[Jet], like: Jet) -> Jet:
    """OSCILLATOR_AD * <delta, beta_hat(w)> as a jet in ``like``'s space."""
    acc = like.zero_like()
    for dj, bj in zip(delta, beta_hat):
        if dj:
            acc = acc + embed(bj, like.nz, like.bound, like.basis).scale(dj)
    return acc.scale(OSCILLATOR_AD)


def homological_solve(offres: Jet, beta_hat: Sequence[Jet]) -> Jet:
    """tau' with sum_j beta_hat_j (i/hbar)[|z_j|^2, tau'] = offres."""
    if offres.basis != COMPLEX:
        raise ValueError("homological_solve works in the complex basis")
    groups: Dict[Tuple, Jet] = {}
    for key in offres:
        if key.alpha == key.gamma:
            raise ValueError(f"resonant monomial alpha=gamma={key.alpha} passed to homological_solve")
        groups.setdefault((key.alpha, key.gamma, key.l), None)

    scale = _frequency_scale(beta_hat)
    tau = offres.zero_like()
    for (alpha, gamma, l) in groups:
        part = offres.filter(lambda key, a=alpha, g=gamma, ll=l: key.alpha == a and key.gamma == g
                             and key.l == ll)
        delta = tuple(a - g for a, g in zip(alpha, gamma))
        D = _divisor(delta, beta_hat, offres)
        d0 = complex(D.constant_term())
        if abs(d0) < Config.RESONANCE_TOL * scale:
            raise ResonanceError(f"resonant divisor for alpha-gamma={list(delta)} "
                                 f"(|<alpha-gamma, beta>| = {abs(d0) / 2:.3e})", delta, d0)
        tau = tau + part * jet_invert(D)
    return tau


# ---------------------------------------------------------------------------
# Star powers of the oscillators
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def star_power_table(max_m: int) -> Tuple[Tuple[Fraction, ...], ...]:
    """T[m][p]: I^{*m} = sum_p T[m][p] I^p hbar^(m-p) for one oscillator (exact)."""
    bound = GradeBound(2 * max_m, 0, None)
    I = oscillator(0, 0, 1, bound, COMPLEX, exact=True)
    rows = [(Fraction(1),)]
    power = Jet.constant(1, 0, 1, bound, COMPLEX, exact=True)
    for m in range(1, max_m + 1):
        power = moyal_star(I, power)
        row = [Fraction(0)] * (m + 1)
        for key, c in power.items():
            p = key.alpha[0]
            if key.gamma[0] != p or key.l != m - p:
                raise InternalConsistencyError(f"star power I^*{m} has a non-oscillator term {key}")
            c = sympy.nsimplify(c)
            if not c.is_real:
                raise InternalConsistencyError(f"star power I^*{m} has a complex coefficient {c}")
            row[p] = Fraction(int(c.p), int(c.q))
        rows.append(tuple(row))
    return tuple(rows)


@lru_cache(maxsize=None)
def _plain_to_star(max_m: int) -> Tuple[Tuple[Fraction, ...], ...]:
    """U[m][p]: I^m = sum_p U[m][p] hbar^(m-p) I^{*p}."""
    T = star_power_table(max_m)
    U: List[List[Fraction]] = []
    for m in range(max_m + 1):
        row = [Fraction(0)] * (m + 1)
        row[m] = Fraction(1)
        for q in range(m):
            if T[m][q] == 0:
                continue
            for p in range(q + 1):
                row[p] -= T[m][q] * U[q][p]
        U.append(row)
    return tuple(tuple(r) for r in U)


def _w_coefficient(jet: Jet, alpha, l: int) -> Jet:
    """The w-jet multiplying z^alpha zbar^alpha hbar^l."""
    bound = GradeBound(0, jet.bound.max_w_degree, jet.bound.max_total_degree)
    return jet.filter(lambda key: key.alpha == alpha and key.gamma == alpha and key.l == l).remap(
        lambda key: MultiIndex(key.w, (), (), 0), jet.nw, 0, bound, REAL)


def star_rewrite(kappa: Jet) -> FStarTable:
    """Rewrite sum c(w) |z|^{2m} hbar^l as sum c*(w) I^{*m} hbar^l."""
    if kappa.basis != COMPLEX:
        raise ValueError("star_rewrite expects a complex-basis jet")
    if any(key.alpha != key.gamma for key in kappa):
        raise ValueError("star_rewrite expects a resonant jet (alpha == gamma only)")
    max_m = max((max(key.alpha, default=0) for key in kappa), default=0)
    U = _plain_to_star(max_m)
    table: FStarTable = {}
    seen = sorted({(key.alpha, key.l) for key in kappa})
    for alpha, l in seen:
        coeff = _w_coefficient(kappa, alpha, l)
        per_pair = [[(p, U[m][p], m - p) for p in range(m + 1) if U[m][p] != 0] for m in alpha]
        for combo in product(*per_pair):
            weight = Fraction(1)
            shift = 0
            for _, u, s in combo:
                weight *= u
                shift += s
            key = (l + shift, tuple(p for p, _, _ in combo))
            term = coeff.scale(weight)
            table[key] = table[key] + term if key in table else term
    return {key: jet for key, jet in sorted(table.items()) if not jet.is_zero}


def expand_fstar(table: FStarTable, nz: int, bound: GradeBound) -> Jet:
    """Inverse of star_rewrite: sum c*(w) I_1^{*m_1} ... hbar^l as a complex-basis jet."""
    if not table:
        raise ValueError("expand_fstar needs a non-empty table to fix the w-space")
    nw = next(iter(table.values())).nw
    max_m = max((max(m, default=0) for _, m in table), default=0)
    T = star_power_table(max_m)
    out = Jet.zero(nw, nz, bound, COMPLEX)
    for (l, m), coeff in table.items():
        lifted = embed(coeff, nz, bound, COMPLEX)
        per_pair = [[(p, T[mj][p], mj - p) for p in range(mj + 1) if T[mj][p] != 0] for mj in m]
        for combo in product(*per_pair):
            weight = Fraction(1)
            shift = l
            alpha = []
            for p, t, s in combo:
                weight *= t
                shift += s
                alpha.append(p)
            mono = Jet.monomial((0,) * nw, tuple(alpha), tuple(alpha), shift, 1, bound, COMPLEX)
            out = out + (lifted * mono).scale(weight)
    return out


# ---------------------------------------------------------------------------
# Birkhoff iteration
# ---------------------------------------------------------------------------

def quadratic_part(beta_hat: Sequence[Jet], like: Jet) -> Jet:
    """H0 = sum_j beta_hat_j(w) |z_j|^2 in ``like``'s space."""
    H0 = like.zero_like()
    for j, bj in enumerate(beta_hat):
        I = oscillator(j, like.nw, like.nz, like.bound, COMPLEX, like.exact)
        H0 = H0 + embed(bj, like.nz, like.bound, COMPLEX) * I
    return H0


def _check_resonance_order(beta_hat: Sequence[Jet], r: int):
    beta0 = [complex(b.constant_term()).real for b in beta_hat]
    if len(beta0) < 2 or r <= 3:
        return
    vector = find_resonance(beta0, r - 1)
    if vector is not None:
        raise ResonanceError(f"frequencies {beta0} resonate at order {sum(abs(a) for a in vector)} "
                             f"below r={r}", vector, complex(np.dot(vector, beta0)))


def birkhoff_reduce(symbol: Jet, beta_hat: Sequence[Jet], r: int) -> NormalFormResult:
    """exp((i/hbar) ad_tau)(H0 + gamma) = H0 + kappa + rho with kappa resonant below r."""
    if symbol.basis != COMPLEX:
        raise ValueError("birkhoff_reduce expects a complex-basis symbol")
    if r < 3:
        raise ValueError(f"r must be >= 3, got {r}")
    if r - 1 > symbol.bound.max_phase_degree:
        raise BoundOverflowError(f"r={r} needs phase degree {r - 1}, the symbol is bounded at "
                                 f"{symbol.bound.max_phase_degree}", {'r': r})
    _check_resonance_order(beta_hat, r)

    H0 = quadratic_part(beta_hat, symbol)
    gamma = symbol - H0
    low, gamma = grade_split(gamma, 3)
    scale = max(1.0, symbol.max_abs())
    if low.max_abs() > Config.SYMPLECTIC_TOL * scale:
        raise ValuationError(f"symbol minus H0 has phase degree < 3 terms of size {low.max_abs():.2e}",
                             {'size': low.max_abs()})
    symbol = H0 + gamma

    tau = symbol.zero_like()
    K = symbol.zero_like()
    stages = []
    for N in range(3, r):
        current = exp_ad(tau, symbol)
        R_N = (current - H0 - K).homogeneous_part(N)
        K_N, offres = resonant_split(R_N)
        tau_N = homological_solve(offres, beta_hat) if not offres.is_zero else offres
        tau = tau + tau_N
        K = K + K_N
        stages.append({'degree': N, 'resonant_terms': len(K_N), 'offres_terms': len(offres),
                       'tau_terms': len(tau_N)})
        logger.debug(f"Birkhoff degree {N}: {len(K_N)} resonant, {len(offres)} solved")

    transformed = exp_ad(tau, symbol)
    remainder = transformed - H0 - K
    below, rho = grade_split(remainder, r)
    residual = below.max_abs()
    if residual > Config.SYMPLECTIC_TOL * scale:
        raise InternalConsistencyError(f"normal form left non-resonant terms of size {residual:.2e} "
                                       f"below degree {r}", {'residual': residual})
    fstar = star_rewrite(K) if not K.is_zero else {}
    logger.info(f"Normal form complete to r={r}: kappa {len(K)} terms, rho {len(rho)} terms, "
                f"residual {residual:.2e}")
    return NormalFormResult(tau=tau, kappa=K, rho=rho, r=r, fstar=fstar, H0=H0,
                            beta_hat=tuple(beta_hat), stages=stages, residual=residual)


# ---------------------------------------------------------------------------
# Williamson normalization and the second stage
# ---------------------------------------------------------------------------

def _symplectic_matrix(n: int) -> np.ndarray:
    return linalg.block_diag(*[np.array([[0.0, -1.0], [1.0, 0.0]])] * n)


def williamson(Q: np.ndarray) -> WilliamsonResult:
    """Symplectic M with M^T Q M = diag(nu_1, nu_1, ..., nu_n, nu_n), nu ascending.

    The symplectic form is the w-space one (pairs (y, eta), Omega(d/dy, d/deta) = -1).
    Each pair block of M is rotated to be symmetric with nonnegative trace, so
    Q = c * Identity gives M = Identity.
    """
    Q = np.asarray(Q, dtype=float)
    dim = Q.shape[0]
    if Q.shape != (dim, dim) or dim % 2:
        raise ValueError(f"williamson needs an even square matrix, got {Q.shape}")
    Q = 0.5 * (Q + Q.T)
    eigs, vecs = np.linalg.eigh(Q)
    if eigs.min() <= 1e-12 * max(1.0, eigs.max()):
        raise DegenerateWellError(f"quadratic form is not positive definite (min eigenvalue {eigs.min():.3e})",
                                  {'eigenvalues': eigs})
    n = dim // 2
    J = _symplectic_matrix(n)
    inv_sqrt = vecs @ np.diag(eigs ** -0.5) @ vecs.T
    S = inv_sqrt @ J @ inv_sqrt
    S = 0.5 * (S - S.T)
    T, U = linalg.schur(S, output='real')

    blocks = []
    for j in range(n):
        cols = U[:, 2 * j:2 * j + 2].copy()
        t = T[2 * j, 2 * j + 1]
        if t > 0:
            cols[:, 1] *= -1
        blocks.append((1.0 / abs(t), cols))
    blocks.sort(key=lambda item: item[0])
    nu = tuple(float(b[0]) for b in blocks)
    U = np.hstack([b[1] for b in blocks])
    M = inv_sqrt @ U @ np.diag(np.repeat(np.sqrt(nu), 2))

    for j in range(n):
        B = M[2 * j:2 * j + 2, 2 * j:2 * j + 2]
        theta = math.atan2(B[0, 1] - B[1, 0], B[0, 0] + B[1, 1])
        R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        M[:, 2 * j:2 * j + 2] = M[:, 2 * j:2 * j + 2] @ R

    target = np.diag(np.repeat(nu, 2))
    residual = max(float(np.max(np.abs(M.T @ J @ M - J))),
                   float(np.max(np.abs(M.T @ Q @ M - target))) / max(1.0, max(nu)))
    if residual > 1e-9:
        raise InternalConsistencyError(f"Williamson normalization residual {residual:.2e}",
                                       {'residual': residual})
    return WilliamsonResult(nu=nu, linear_map=M, residual=residual)


def quadratic_form_matrix(jet: Jet) -> np.ndarray:
    """Symmetric Q with (w-quadratic, hbar-free part of jet)(w) = w^T Q w."""
    Q = np.zeros((jet.nw, jet.nw))
    for key, c in jet.items():
        if key.l != 0 or key.w_degree != 2 or key.z_degree != 0:
            continue
        idx = [i for i, p in enumerate(key.w) for _ in range(p)]
        value = complex(c).real
        if idx[0] == idx[1]:
            Q[idx[0], idx[0]] += value
        else:
            Q[idx[0], idx[1]] += value / 2
            Q[idx[1], idx[0]] += value / 2
    return Q


def well_reduce(band_symbol: Jet, order: int, resonance_cap: Optional[int] = None) -> WellExpansion:
    """Second-stage normal form of a (w, hbar) symbol around its minimum at w = 0."""
    if band_symbol.nz != 0 or band_symbol.nw % 2:
        raise ValueError(f"well_reduce needs an even w-only symbol, got nw={band_symbol.nw}, "
                         f"nz={band_symbol.nz}")
    available = band_symbol.bound.max_total_degree
    if available is None:
        available = band_symbol.bound.max_w_degree
    if order > available:
        raise BoundOverflowError(f"well_reduce order {order} exceeds the symbol's exact degree {available}",
                                 {'order': order, 'available': available})
    n = band_symbol.nw // 2
    b0 = complex(band_symbol.constant_term()).real
    scale = max(1.0, band_symbol.max_abs())
    gradient = band_symbol.filter(lambda key: key.l == 0 and key.w_degree == 1)
    if gradient.max_abs() > 1e-8 * scale:
        raise DegenerateWellError(f"band symbol is not critical at w = 0 (|grad| = {gradient.max_abs():.2e})")

    W = williamson(quadratic_form_matrix(band_symbol))
    nu = W.nu
    if n > 1:
        vector = find_resonance(nu, resonance_cap or max(order, 2))
        if vector is not None:
            raise ResonanceError(f"Williamson frequencies {list(nu)} are resonant", vector,
                                 complex(np.dot(vector, nu)))

    # w = M w', then (y, eta) become the phase variables of the engine
    bound = band_symbol.bound
    linear = JetMap.affine(W.linear_map, np.zeros(2 * n), 2 * n, 0, bound, REAL, 'w', 'w')
    moved = jet_compose(band_symbol - b0, linear, bound).filter(lambda key: key.w_degree != 1 or key.l)
    phase_bound = GradeBound(order, 0, order)
    symbol = complex_convert(w_to_phase(moved, phase_bound), COMPLEX).real_part()

    central = symbol.filter(lambda key: key.z_degree == 0)
    central_coeffs = {key.l: complex(c).real for key, c in central.items()}
    c0 = central_coeffs.get(1, 0.0)

    nu_jets = tuple(Jet.constant(v, 0, 0, phase_bound, REAL) for v in nu)
    nf = birkhoff_reduce(symbol - central, nu_jets, order + 1)

    # kappa of the full symbol: add the hbar-only central part back in
    kappa = nf.kappa + central
    fstar = star_rewrite(kappa + nf.H0)
    nf = NormalFormResult(tau=nf.tau, kappa=kappa, rho=nf.rho, r=nf.r, fstar=fstar, H0=nf.H0,
                          beta_hat=nf.beta_hat, stages=nf.stages, residual=nf.residual)
    logger.info(f"Well expansion: b0={b0:.12g} nu={[round(v, 12) for v in nu]} c0={c0:.6g} order={order}")
    return WellExpansion(b0=b0, c0=c0, williamson=W, normal_form=nf, central=central_coeffs, order=order)
