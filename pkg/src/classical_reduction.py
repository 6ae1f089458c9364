"""
Classical reduction near the characteristic manifold

Builds, as truncated jets centered at the well:
  - the Darboux chart psi: w -> q pulling B back to dEta^dY (phi = psi^-1)
  - smooth frequency and frame jets along Sigma = {p = A(q)}
  - the tubular map Phi(w, x, xi) -> (q, p), a Lie-series flow of the frame
    fields corrected degree by degree until Phi^* omega = omega_0
  - the reduced Hamiltonian H o Phi = sum_j beta_hat_j(w) |z_j|^2 + O(|z|^3)

Coordinates on the ambient side are displacements Q = q - q0 and
P = p - A(q0). omega = dp^dq, so omega(X, Y) = X_p.Y_q - X_q.Y_p. Source
variables are ordered (y1, eta1, ..., x1..xn, xi1..xin); the source form is
sum dEta^dY + sum dXi^dX, and the frame attachment is d/dxi -> e_j, d/dx -> f_j.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .config import Config
from .errors import InternalConsistencyError
from .field_model import MagneticSystem, WellData, magnetic_matrix, skew_frequencies
from .jetcalc import (COMPLEX, REAL, GradeBound, Jet, JetMap, MultiIndex, complex_convert,
                      embed, jet_compose, jet_power, linear_combination)

logger = logging.getLogger(__name__)

DARBOUX_METHODS = ('lstsq', 'homotopy')


@dataclass(frozen=True, eq=False)
class FrameJets:
    """Taylor jets in Q of beta_j(q0 + Q) and the unit frames u_j, v_j."""

    beta: Tuple[Jet, ...]
    u: Tuple[Tuple[Jet, ...], ...]
    v: Tuple[Tuple[Jet, ...], ...]


@dataclass(frozen=True, eq=False)
class DarbouxChart:
    psi: JetMap          # w -> q (absolute)
    phi: JetMap          # q - q0 -> w
    linear: np.ndarray
    method: str
    residual: float


@dataclass(frozen=True, eq=False)
class TubularMap:
    Phi: JetMap          # (w, x, xi) -> (Q, P)
    Phi1: JetMap         # before the symplectic correction
    S: JetMap
    residual: float


@dataclass(frozen=True, eq=False)
class HamiltonianJet:
    jet: Jet
    bound: GradeBound
    beta_hat: Tuple[Jet, ...]


@dataclass(frozen=True, eq=False)
class ReductionResult:
    hamiltonian: HamiltonianJet
    chart: DarbouxChart
    tubular: TubularMap
    frames: FrameJets
    total_order: int
    residuals: Dict[str, float] = field(default_factory=dict)

    @property
    def beta_hat(self) -> Tuple[Jet, ...]:
        return self.hamiltonian.beta_hat


def reduction_bound(z_order: int, w_order: int) -> int:
    """Total degree on which the reduced Hamiltonian is exact."""
    return min(z_order, w_order + 2)


def _q_bound(order: int) -> GradeBound:
    return GradeBound(0, order, order)


def _shift_map(center: Sequence[float], nvars: int, bound: GradeBound) -> JetMap:
    """Q -> center + Q on the first len(center) of ``nvars`` w-variables."""
    d = len(center)
    matrix = np.zeros((d, nvars))
    matrix[:, :d] = np.eye(d)
    return JetMap.affine(matrix, center, nvars, 0, bound, REAL, 'Q', 'q')


def _symplectic_matrix(npairs: int) -> np.ndarray:
    """Pair block [[0, -1], [1, 0]]: Omega(d/dy, d/deta) = -1."""
    return linalg.block_diag(*[np.array([[0.0, -1.0], [1.0, 0.0]])] * npairs) if npairs else np.zeros((0, 0))


def source_form(d: int) -> np.ndarray:
    """omega_0 on (w, x, xi): sum dEta^dY + sum dXi^dX."""
    n = d // 2
    omega = np.zeros((2 * d, 2 * d))
    omega[:d, :d] = _symplectic_matrix(n)
    for j in range(n):
        x, xi = d + j, d + n + j
        omega[x, xi] = -1.0
        omega[xi, x] = 1.0
    return omega


# ---------------------------------------------------------------------------
# Ambient Hamiltonian and pointwise frames
# ---------------------------------------------------------------------------

def hamiltonian_jet(sys: MagneticSystem, center: Sequence[float], order: int) -> Jet:
    """|p - A(q)|^2 in displacements (Q, P) from (center, A(center))."""
    d = sys.dimension
    bound = _q_bound(order)
    shift = _shift_map(center, 2 * d, bound)
    A_center = sys.potential_at(center)
    H = Jet.zero(2 * d, 0, bound, REAL)
    for i in range(d):
        A_shifted = jet_compose(sys.potential[i], shift, bound) - A_center[i]
        f = Jet.variable(d + i, 2 * d, 0, bound, REAL) - A_shifted
        H = H + f * f
    return H


def sigma_frames(sys: MagneticSystem, q: Sequence[float], rotation: Optional[Sequence[float]] = None
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """Normal frames e_j, f_j at j(q) in (Q, P) components, omega(e_i, f_j) = delta_ij."""
    M = magnetic_matrix(sys, q)
    beta, frames = skew_frequencies(M, rotation)
    G = sys.potential_gradient_at(q)
    e = np.array([np.concatenate([u, G @ u]) / math.sqrt(b) for b, (u, _) in zip(beta, frames)])
    f = np.array([np.concatenate([v, G @ v]) / math.sqrt(b) for b, (_, v) in zip(beta, frames)])

    d = sys.dimension

    def omega(X, Y):
        return X[d:] @ Y[:d] - X[:d] @ Y[d:]

    n = len(beta)
    worst = 0.0
    for i in range(n):
        for j in range(n):
            worst = max(worst, abs(omega(e[i], f[j]) - (1.0 if i == j else 0.0)),
                        abs(omega(e[i], e[j])), abs(omega(f[i], f[j])))
    if worst > Config.FRAME_TOL:
        raise InternalConsistencyError(f"frames fail symplectic normalization by {worst:.2e}")
    return e, f


def hessian_splitting_check(sys: MagneticSystem, q: Sequence[float]) -> Dict[str, float]:
    """Hess H at j(q) vanishes on T Sigma and equals 2|BOP Y|^2 on normal vectors."""
    d = sys.dimension
    H = hamiltonian_jet(sys, q, 2)
    hess = np.zeros((2 * d, 2 * d))
    for key, c in H.items():
        e = key.flat
        if sum(e) != 2:
            continue
        idx = [i for i, p in enumerate(e) for _ in range(p)]
        if idx[0] == idx[1]:
            hess[idx[0], idx[0]] += 2 * c.real
        else:
            hess[idx[0], idx[1]] += c.real
            hess[idx[1], idx[0]] += c.real
    G = sys.potential_gradient_at(q)
    M = magnetic_matrix(sys, q)
    tangent = 0.0
    normal = 0.0
    for k in range(d):
        X = np.eye(d)[k]
        V = np.concatenate([X, G.T @ X])
        tangent = max(tangent, abs(V @ hess @ V))
        N = np.concatenate([X, G @ X])
        normal = max(normal, abs(N @ hess @ N - 2 * np.sum((M @ X) ** 2)))
    return {'tangent': float(tangent), 'normal': float(normal)}


# ---------------------------------------------------------------------------
# Frequency and frame jets (perturbation of the skew eigenproblem)
# ---------------------------------------------------------------------------

def _matvec(M: Sequence[Sequence[Jet]], vec: Sequence[Jet]) -> List[Jet]:
    return [sum((M[i][k] * vec[k] for k in range(len(vec))), vec[0].zero_like()) for i in range(len(M))]


def frame_jets(sys: MagneticSystem, q0: Sequence[float], order: int,
               rotation: Optional[Sequence[float]] = None) -> FrameJets:
    """Jets of beta_j and (u_j, v_j) along q0 + Q by Rayleigh-Schroedinger recursion."""
    d = sys.dimension
    bound = _q_bound(order)
    shift = _shift_map(q0, d, bound)
    # -i BOP(q0 + Q) as a Hermitian matrix of Q-jets
    Hjets = [[jet_compose(sys.field_jets[i][k], shift, bound).scale(-1j) for k in range(d)]
             for i in range(d)]
    M0 = magnetic_matrix(sys, q0)
    H0 = -1j * M0
    beta0, frames0 = skew_frequencies(M0, rotation)
    values, vectors = np.linalg.eigh(H0)
    zero = Jet.zero(d, 0, bound, REAL)
    dH = [[Hjets[i][k] - H0[i, k] for k in range(d)] for i in range(d)]

    betas, us, vs = [], [], []
    for j, (b0, (u0, v0)) in enumerate(zip(beta0, frames0)):
        eps0 = (u0 + 1j * v0) / math.sqrt(2)
        others = [i for i in range(d) if abs(values[i] - b0) > 1e-8 * abs(b0)]
        R = sum(np.outer(vectors[:, i], vectors[:, i].conj()) / (values[i] - b0) for i in others)
        eps = [zero + complex(c) for c in eps0]
        beta = zero + b0
        for _ in range(order + 1):
            dHe = _matvec(dH, eps)
            beta = b0 + linear_combination(list(eps0.conj()), dHe)
            shifted = [dHe[i] - (beta - b0) * eps[i] for i in range(d)]
            correction = [linear_combination(list(R[i]), shifted) for i in range(d)]
            eps = [eps0[i] - correction[i] for i in range(d)]
        norm = sum((e.conj() * e for e in eps), zero)
        scale = jet_power(norm.real_part(), Fraction(-1, 2))
        eps = [e * scale for e in eps]
        betas.append(beta.real_part())
        us.append(tuple(e.real_part().scale(math.sqrt(2)) for e in eps))
        vs.append(tuple((e - e.conj()).scale(-0.5j * math.sqrt(2)) for e in eps))
    return FrameJets(tuple(betas), tuple(us), tuple(vs))


def beta_jets(sys: MagneticSystem, q0: Sequence[float], order: int) -> Tuple[Jet, ...]:
    """Taylor jets of the frequencies beta_j(q0 + Q); their sum is the jet of b."""
    return frame_jets(sys, q0, order).beta


# ---------------------------------------------------------------------------
# Moser corrections on jets
# ---------------------------------------------------------------------------

def pullback_form(m: JetMap, form_jets: Optional[Sequence[Sequence[Jet]]] = None,
                  bound: Optional[GradeBound] = None) -> Dict[Tuple[int, int], Jet]:
    """Upper-triangular coefficients of m^* of a 2-form.

    Without ``form_jets`` the target is the cotangent form dp^dq on (Q, P)
    components; otherwise ``form_jets[i][j]`` are the target form's matrix
    entries, already composed with m.
    """
    first = m.components[0]
    nvars = first.nw + 2 * first.nz
    if bound is None:
        top = m.bound.max_total_degree
        bound = GradeBound.total(max(0, (top if top is not None else m.bound.max_w_degree) - 1))
    D = [[c.derivative(a).with_bound(bound) for a in range(nvars)] for c in m.components]
    out: Dict[Tuple[int, int], Jet] = {}
    if form_jets is None:
        d = m.dim // 2
        for a in range(nvars):
            for b in range(a + 1, nvars):
                acc = Jet.zero(first.nw, first.nz, bound, first.basis)
                for i in range(d):
                    acc = acc + D[d + i][a] * D[i][b] - D[i][a] * D[d + i][b]
                out[(a, b)] = acc
        return out
    n = m.dim
    for a in range(nvars):
        for b in range(a + 1, nvars):
            acc = Jet.zero(first.nw, first.nz, bound, first.basis)
            for i in range(n):
                if D[i][a].is_zero:
                    continue
                inner = Jet.zero(first.nw, first.nz, bound, first.basis)
                for j in range(n):
                    if i != j and not D[j][b].is_zero:
                        inner = inner + form_jets[i][j].with_bound(bound) * D[j][b]
                acc = acc + D[i][a] * inner
            out[(a, b)] = acc
    return out


def _form_residual(pullback: Dict[Tuple[int, int], Jet], target: np.ndarray
                   ) -> Dict[Tuple[int, int], Jet]:
    return {(a, b): jet - target[a, b] for (a, b), jet in pullback.items()}


def _max_residual(sigma: Dict[Tuple[int, int], Jet]) -> float:
    return max((jet.max_abs() for jet in sigma.values()), default=0.0)


def symplectic_residual(Phi: JetMap, bound: Optional[GradeBound] = None) -> float:
    """Largest coefficient of Phi^* omega - omega_0 for a tubular map."""
    d = Phi.dim // 2
    return _max_residual(_form_residual(pullback_form(Phi, bound=bound), source_form(d)))


def _entry(sigma: Dict[Tuple[int, int], Jet], a: int, b: int) -> Optional[Jet]:
    if a < b:
        return sigma.get((a, b))
    if a > b:
        jet = sigma.get((b, a))
        return None if jet is None else -jet
    return None


def _monomials(nvars: int, degree: int) -> List[Tuple[int, ...]]:
    out = []
    for combo in itertools.combinations_with_replacement(range(nvars), degree):
        e = [0] * nvars
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    return out


def _homotopy_primitive(sigma_k: Dict[Tuple[int, int], Jet], k: int, variables: Sequence[Jet],
                        omega: np.ndarray) -> List[Jet]:
    """X = -omega alpha with alpha = iota_R sigma_k / (k + 2)."""
    n = len(variables)
    zero = variables[0].zero_like()
    alpha = []
    for b in range(n):
        acc = zero
        for a in range(n):
            s = _entry(sigma_k, a, b)
            if s is not None and not s.is_zero:
                acc = acc + variables[a] * s
        alpha.append(acc.scale(1.0 / (k + 2)))
    return [linear_combination(list(-omega[c]), alpha) for c in range(n)]


def _lstsq_primitive(sigma_k: Dict[Tuple[int, int], Jet], k: int, variables: Sequence[Jet],
                     omega: np.ndarray) -> List[Jet]:
    """Minimal-norm X, homogeneous of degree k + 1, with d(iota_X omega) = -sigma_k."""
    n = len(variables)
    template = variables[0]
    unknown_monos = _monomials(n, k + 1)
    row_monos = _monomials(n, k)
    row_index = {}
    for a in range(n):
        for b in range(a + 1, n):
            for mono in row_monos:
                row_index[(a, b, mono)] = len(row_index)
    A = np.zeros((len(row_index), n * len(unknown_monos)))
    for col_comp in range(n):
        for mi, mono in enumerate(unknown_monos):
            col = col_comp * len(unknown_monos) + mi
            # alpha_b = omega[col_comp, b] w^mono;  (d alpha)_cb = d_c alpha_b - d_b alpha_c
            for c in range(n):
                if mono[c] == 0:
                    continue
                lowered = list(mono)
                lowered[c] -= 1
                lowered = tuple(lowered)
                for b in range(n):
                    coef = omega[col_comp, b] * mono[c]
                    if coef == 0 or b == c:
                        continue
                    if c < b:
                        A[row_index[(c, b, lowered)], col] += coef
                    else:
                        A[row_index[(b, c, lowered)], col] -= coef
    rhs = np.zeros(len(row_index), dtype=complex)
    for (a, b), jet in sigma_k.items():
        for key, value in jet.items():
            rhs[row_index[(a, b, key.flat)]] -= value
    solution_re, *_ = linalg.lstsq(A, rhs.real)
    solution_im, *_ = linalg.lstsq(A, rhs.imag)
    solution = solution_re + 1j * solution_im
    residual = float(np.max(np.abs(A @ solution - rhs), initial=0.0))
    if residual > Config.SYMPLECTIC_TOL * max(1.0, float(np.max(np.abs(rhs), initial=0.0))):
        raise InternalConsistencyError(f"Moser step at degree {k} left residual {residual:.2e}")
    comps = []
    for c in range(n):
        terms = {}
        for mi, mono in enumerate(unknown_monos):
            value = solution[c * len(unknown_monos) + mi]
            if value != 0:
                terms[_split_key(mono, template)] = value
        comps.append(Jet(template.nw, template.nz, template.bound, terms, template.basis))
    return comps


def _split_key(flat: Tuple[int, ...], template: Jet) -> MultiIndex:
    nw, nz = template.nw, template.nz
    return MultiIndex(flat[:nw], flat[nw:nw + nz], flat[nw + nz:], 0)


# ---------------------------------------------------------------------------
# Darboux chart
# ---------------------------------------------------------------------------

def darboux_jet(sys: MagneticSystem, well: WellData, order: int, method: str = 'lstsq',
                rotation: Optional[Sequence[float]] = None) -> DarbouxChart:
    """Chart psi: w -> q with psi^* B = dEta^dY through w-degree ``order``."""
    if method not in DARBOUX_METHODS:
        raise ValueError(f"unknown Darboux method {method!r}")
    d = sys.dimension
    bound = _q_bound(order)
    beta, frames = skew_frequencies(magnetic_matrix(sys, well.q0), rotation)
    L = np.zeros((d, d))
    for j, (b, (u, v)) in enumerate(zip(beta, frames)):
        L[:, 2 * j] = u / math.sqrt(b)
        L[:, 2 * j + 1] = v / math.sqrt(b)
    psi = JetMap.affine(L, well.q0, d, 0, bound, REAL, 'w', 'q')
    omega = _symplectic_matrix(d // 2)
    variables = [Jet.variable(i, d, 0, bound, REAL) for i in range(d)]
    solve = _lstsq_primitive if method == 'lstsq' else _homotopy_primitive

    for k in range(1, order):
        sigma = _darboux_residual(sys, psi, omega)
        sigma_k = {ab: jet.homogeneous_part(k, 'w') for ab, jet in sigma.items()}
        sigma_k = {ab: jet for ab, jet in sigma_k.items() if not jet.is_zero}
        if not sigma_k:
            continue
        X = solve(sigma_k, k, variables, omega)
        step = JetMap(tuple(variables[c] + X[c] for c in range(d)), 'w', 'w')
        psi = psi.compose(step, bound)

    sigma = _darboux_residual(sys, psi, omega)
    residual = _max_residual(sigma)
    if residual > Config.SYMPLECTIC_TOL:
        raise InternalConsistencyError(f"Darboux chart residual {residual:.2e} above tolerance",
                                       {'residual': residual})
    phi = psi.inverse(bound)
    logger.info(f"Darboux chart built to order {order} ({method}), residual {residual:.2e}")
    return DarbouxChart(psi=psi, phi=JetMap(phi.components, 'Q', 'w'), linear=L,
                        method=method, residual=residual)


def _darboux_residual(sys: MagneticSystem, psi: JetMap, omega: np.ndarray) -> Dict[Tuple[int, int], Jet]:
    d = sys.dimension
    bound = psi.bound.widen(0, -1, -1) if psi.bound.max_w_degree > 0 else psi.bound
    # form matrix B_ij = BOP_ji, composed with psi
    B = [[jet_compose(sys.field_jets[j][i], psi, bound) if i != j else None for j in range(d)]
         for i in range(d)]
    return _form_residual(pullback_form(psi, B, bound), omega)


# ---------------------------------------------------------------------------
# Tubular map
# ---------------------------------------------------------------------------

def _exp_series(f: Jet, t: Jet, apply_X, cap: int, start: int = 0) -> Jet:
    """sum_m t^m/m! X^m f (start=0), or sum_{m>=1} t^m/m! X^(m-1) f (start=1)."""
    if start == 0:
        total = f
        term = f
        m0 = 1
    else:
        term = f * t
        total = term
        m0 = 2
    for m in range(m0, cap + 1):
        term = (apply_X(term) * t).scale(1.0 / m)
        if term.is_zero:
            break
        total = total + term
    return total


def tubular_map_jet(sys: MagneticSystem, well: WellData, chart: DarbouxChart, order: int,
                    frames: Optional[FrameJets] = None,
                    rotation: Optional[Sequence[float]] = None) -> TubularMap:
    """Phi(w, x, xi) -> (Q, P) with Phi^* omega = omega_0 through degree ``order`` - 1."""
    d = sys.dimension
    n = d // 2
    bound = GradeBound.total(order)
    q_bound = _q_bound(order)
    frames = frames or frame_jets(sys, well.q0, order, rotation)

    # frame fields along Sigma, extended constantly in P; coefficients are Q-jets
    shift = _shift_map(well.q0, d, q_bound)
    G = [[jet_compose(sys.potential_gradient[i][k], shift, q_bound) for k in range(d)] for i in range(d)]
    fields = []
    for j in range(n):
        inv_sqrt = jet_power(frames.beta[j], Fraction(-1, 2))
        for vec, label in ((frames.v[j], 'f'), (frames.u[j], 'e')):
            a = [c * inv_sqrt for c in vec]
            b = _matvec(G, a)
            fields.append((label, j, [embed(c, n, bound, REAL) for c in a],
                           [embed(c, n, bound, REAL) for c in b]))

    # Lie series on coordinate functions: Q-slots are w-variables, flow times are x/xi
    GQ = [Jet.variable(i, d, n, bound, REAL) for i in range(d)]
    gP = [Jet.zero(d, n, bound, REAL) for _ in range(d)]
    for label, j, a, b in fields:
        t = Jet.variable(d + j if label == 'f' else d + n + j, d, n, bound, REAL)

        def apply_X(f, a=a):
            return sum((a[k] * f.derivative(k) for k in range(d)), f.zero_like())

        GQ = [_exp_series(g, t, apply_X, order) for g in GQ]
        gP = [_exp_series(gP[i], t, apply_X, order) + _exp_series(b[i], t, apply_X, order, start=1)
              for i in range(d)]

    # evaluate at the base point j(psi(w))
    psi_disp = [embed(c - well.q0[i], n, bound, REAL) for i, c in enumerate(chart.psi.components)]
    params = [Jet.variable(d + i, d, n, bound, REAL) for i in range(2 * n)]
    base = JetMap(tuple(psi_disp + params), 'source', 'Q')
    A0 = sys.potential_at(well.q0)
    A_on_psi = [embed(jet_compose(sys.potential[i], chart.psi, q_bound) - A0[i], n, bound, REAL)
                for i in range(d)]
    Q_comps = [jet_compose(g, base, bound) for g in GQ]
    P_comps = [A_on_psi[i] + jet_compose(gP[i], base, bound) for i in range(d)]
    Phi1 = JetMap(tuple(Q_comps + P_comps), 'source', 'QP')

    # symplectic correction, organized by z-weight (coefficient z-degree + number of dz)
    omega0 = source_form(d)
    nvars = 2 * d
    variables = [Jet.variable(i, d, n, bound, REAL) for i in range(nvars)]
    z_idx = list(range(d, nvars))
    form_bound = GradeBound.total(order - 1)
    S = JetMap(tuple(variables), 'source', 'source')
    Phi = Phi1
    for m in range(2, order + 2):
        sigma = _form_residual(pullback_form(Phi, bound=form_bound), omega0)
        alpha = []
        for b in range(nvars):
            acc = variables[0].zero_like()
            for a in z_idx:
                s = _entry(sigma, a, b)
                if s is None:
                    continue
                k = (1 if a >= d else 0) + (1 if b >= d else 0)
                part = s.homogeneous_part(m - k, 'z') if m - k >= 0 else None
                if part is not None and not part.is_zero:
                    acc = acc + variables[a] * part.with_bound(bound)
            alpha.append(acc.scale(1.0 / m))
        X = [linear_combination(list(-omega0[c]), alpha) for c in range(nvars)]
        if all(x.is_zero for x in X):
            continue
        step = JetMap(tuple(variables[c] + X[c] for c in range(nvars)), 'source', 'source')
        Phi = Phi.compose(step, bound)
        S = S.compose(step, bound)

    sigma = _form_residual(pullback_form(Phi, bound=form_bound), omega0)
    residual = _max_residual(sigma)
    if residual > Config.SYMPLECTIC_TOL:
        raise InternalConsistencyError(f"Tubular map symplectic residual {residual:.2e} above tolerance",
                                       {'residual': residual})
    logger.info(f"Tubular map built to order {order}, symplectic residual {residual:.2e}")
    return TubularMap(Phi=Phi, Phi1=Phi1, S=S, residual=residual)


# ---------------------------------------------------------------------------
# Reduced Hamiltonian
# ---------------------------------------------------------------------------

def reduce_hamiltonian(sys: MagneticSystem, well: WellData, z_order: int = 4, w_order: int = 4,
                       method: str = 'lstsq', rotation: Optional[Sequence[float]] = None
                       ) -> ReductionResult:
    """H o Phi as a complex-basis jet, exact through total degree min(z_order, w_order + 2)."""
    d = sys.dimension
    n = d // 2
    T = reduction_bound(z_order, w_order)
    build = T + 1
    frames = frame_jets(sys, well.q0, build, rotation)
    chart = darboux_jet(sys, well, build, method, rotation)
    tubular = tubular_map_jet(sys, well, chart, build, frames)

    H_amb = hamiltonian_jet(sys, well.q0, build)
    H_real = jet_compose(H_amb, tubular.Phi, GradeBound.total(build)).with_bound(GradeBound.total(T))
    H_hat = complex_convert(H_real, COMPLEX).real_part()

    psi_disp = JetMap(tuple(c - well.q0[i] for i, c in enumerate(chart.psi.components)), 'w', 'Q')
    beta_hat = tuple(jet_compose(bj, psi_disp, _q_bound(T)).real_part() for bj in frames.beta)

    residuals = _hamiltonian_residuals(H_hat, beta_hat, well, T)
    residuals['darboux'] = chart.residual
    residuals['symplectic'] = tubular.residual
    tol = Config.SYMPLECTIC_TOL
    failed = {k: v for k, v in residuals.items() if v > tol}
    if failed:
        raise InternalConsistencyError(f"Reduced Hamiltonian violates its normal structure: {failed}",
                                       {'residuals': residuals})
    logger.info(f"Reduced Hamiltonian built: total degree {T}, {len(H_hat)} terms, "
                f"beta_hat(0)={[round(complex(b.constant_term()).real, 12) for b in beta_hat]}")
    return ReductionResult(hamiltonian=HamiltonianJet(H_hat, GradeBound.total(T), beta_hat),
                           chart=chart, tubular=tubular, frames=frames, total_order=T,
                           residuals=residuals)


def quadratic_coefficient(H_hat: Jet, j: int) -> Jet:
    """The w-jet multiplying |z_j|^2 in a complex-basis symbol."""
    e = tuple(1 if i == j else 0 for i in range(H_hat.nz))
    bound = GradeBound(0, H_hat.bound.max_w_degree,
                       None if H_hat.bound.max_total_degree is None else H_hat.bound.max_total_degree - 2)
    return H_hat.filter(lambda key: key.alpha == e and key.gamma == e and key.l == 0).remap(
        lambda key: MultiIndex(key.w, (), (), 0), H_hat.nw, 0, bound, REAL)


def _hamiltonian_residuals(H_hat: Jet, beta_hat: Sequence[Jet], well: WellData, T: int
                           ) -> Dict[str, float]:
    n = H_hat.nz
    low = H_hat.filter(lambda key: key.z_degree <= 1)
    diag_keys = [tuple(1 if i == j else 0 for i in range(n)) for j in range(n)]
    off = H_hat.filter(lambda key: key.z_degree == 2
                       and not (key.alpha == key.gamma and key.alpha in diag_keys))
    mismatch = 0.0
    for j, bj in enumerate(beta_hat):
        coeff = quadratic_coefficient(H_hat, j)
        mismatch = max(mismatch, (coeff - bj.with_bound(coeff.bound)).max_abs())
    base = max(abs(complex(b.constant_term()).real - beta) for b, beta in zip(beta_hat, well.beta))
    return {'z_constant_linear': low.max_abs(), 'quadratic_offdiagonal': off.max_abs(),
            'beta_hat_mismatch': mismatch, 'beta_hat_base': float(base)}
