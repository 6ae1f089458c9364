"""
Magnetic field model: polynomial potentials, field matrix, frequencies, well

Euclidean R^d, d even. The potential A is a tuple of w-only jets in the
coordinates q. B_ij = d_i A_j - d_j A_i and the operator matrix is its
transpose, so B(Q1, Q2) = Q1^T B Q2 = <BOP Q1, Q2>.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .config import Config, SystemConfig, parse_coefficient
from .errors import (AssumptionError, ConvergenceError, DegenerateFieldError,
                     DegenerateWellError, ResonanceError)
from .jetcalc import REAL, GradeBound, Jet, MultiIndex

logger = logging.getLogger(__name__)

GRADIENT_STEP = 1e-4
HESSIAN_STEP = 1e-3
BETA_GAP_TOL = 1e-8


@dataclass(frozen=True)
class MagneticSystem:
    """Problem definition: dimension, polynomial potential, domain box."""

    dimension: int
    potential: Tuple[Jet, ...]
    box: Tuple[float, ...]
    name: str = 'system'

    def __post_init__(self):
        if self.dimension < 2 or self.dimension % 2:
            raise ValueError(f"dimension must be even and >= 2, got {self.dimension}")
        if len(self.potential) != self.dimension:
            raise ValueError(f"expected {self.dimension} potential components, got {len(self.potential)}")
        for comp in self.potential:
            if comp.nw != self.dimension or comp.nz != 0:
                raise ValueError("potential components must be w-only jets over q")
        if len(self.box) != self.dimension:
            raise ValueError(f"expected {self.dimension} box half-widths")

    @classmethod
    def from_terms(cls, dimension: int, terms: Sequence[Sequence[Dict[str, Any]]],
                   box: Optional[Sequence[float]] = None, name: str = 'system') -> 'MagneticSystem':
        """Build from {coeff, powers} records, one list per component."""
        degree = max([sum(t['powers']) for comp in terms for t in comp] + [1])
        bound = polynomial_bound(degree)
        potential = []
        for comp in terms:
            coeffs: Dict[MultiIndex, float] = {}
            for t in comp:
                key = MultiIndex(tuple(int(p) for p in t['powers']), (), (), 0)
                coeffs[key] = coeffs.get(key, 0.0) + parse_coefficient(t['coeff'])
            potential.append(Jet(dimension, 0, bound, coeffs, REAL))
        return cls(dimension, tuple(potential), tuple(box or [3.0] * dimension), name)

    @classmethod
    def from_config(cls, system: SystemConfig, name: str = 'system') -> 'MagneticSystem':
        return cls.from_terms(system.dimension, system.potential, system.box, name)

    @property
    def degree(self) -> int:
        return max(comp.bound.max_w_degree for comp in self.potential)

    @property
    def pairs(self) -> int:
        return self.dimension // 2

    @cached_property
    def potential_gradient(self) -> Tuple[Tuple[Jet, ...], ...]:
        """DA[i][k] = d_i A_k as jets."""
        return tuple(tuple(self.potential[k].derivative(i) for k in range(self.dimension))
                     for i in range(self.dimension))

    @cached_property
    def field_jets(self) -> Tuple[Tuple[Jet, ...], ...]:
        """Operator-matrix entries BOP[i][j] = B_ji = d_j A_i - d_i A_j."""
        DA = self.potential_gradient
        d = self.dimension
        return tuple(tuple(DA[j][i] - DA[i][j] for j in range(d)) for i in range(d))

    def potential_at(self, q: Sequence[float]) -> np.ndarray:
        return np.array([comp.evaluate(q).real for comp in self.potential])

    def potential_many(self, points: np.ndarray) -> np.ndarray:
        return np.stack([comp.evaluate_many(points).real for comp in self.potential], axis=-1)

    def potential_gradient_at(self, q: Sequence[float]) -> np.ndarray:
        d = self.dimension
        return np.array([[self.potential_gradient[i][k].evaluate(q).real for k in range(d)]
                         for i in range(d)])

    def gauge_shift(self, chi: Jet) -> 'MagneticSystem':
        """A + grad chi for a polynomial chi; the field is unchanged."""
        degree = max(self.degree, chi.bound.max_w_degree)
        bound = polynomial_bound(degree)
        shifted = tuple(a.with_bound(bound) + chi.derivative(i).with_bound(bound)
                        for i, a in enumerate(self.potential))
        return MagneticSystem(self.dimension, shifted, self.box, f"{self.name}+gauge")

    def inside_box(self, q: Sequence[float], margin: float = 0.0) -> bool:
        return all(abs(x) <= b - margin for x, b in zip(q, self.box))


def polynomial_bound(degree: int) -> GradeBound:
    return GradeBound(0, degree, degree)


@dataclass(frozen=True, eq=False)
class WellData:
    q0: np.ndarray
    b0: float
    beta: Tuple[float, ...]
    frames: Optional[Tuple[Tuple[np.ndarray, np.ndarray], ...]]
    hess_b: np.ndarray
    r0: float
    resonance_vector: Optional[Tuple[int, ...]] = None
    field_matrix: Optional[np.ndarray] = None
    iterations: int = 0
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def pairs(self) -> int:
        return len(self.beta)

    @property
    def r0_finite(self) -> bool:
        return math.isfinite(self.r0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'q0': self.q0,
            'b0': self.b0,
            'beta': list(self.beta),
            'frames': ([{'u': u, 'v': v} for u, v in self.frames] if self.frames else None),
            'hess_b': self.hess_b,
            'r0': self.r0 if self.r0_finite else 'inf',
            'resonance_vector': list(self.resonance_vector) if self.resonance_vector else None,
            'iterations': self.iterations,
        }


# ---------------------------------------------------------------------------
# Pointwise field quantities
# ---------------------------------------------------------------------------

def magnetic_matrix(sys: MagneticSystem, q: Sequence[float]) -> np.ndarray:
    """Operator matrix BOP(q) = DA^T - DA, exactly skew-symmetric."""
    DA = sys.potential_gradient_at(q)
    return DA.T - DA


def magnetic_matrices(sys: MagneticSystem, points: np.ndarray) -> np.ndarray:
    """Batched BOP over an (N, d) array of points; returns (N, d, d)."""
    points = np.asarray(points, dtype=float)
    d = sys.dimension
    out = np.zeros((points.shape[0], d, d))
    for i in range(d):
        for j in range(i + 1, d):
            values = sys.field_jets[i][j].evaluate_many(points).real
            out[:, i, j] = values
            out[:, j, i] = -values
    return out


def skew_frequencies(M: np.ndarray, rotation: Optional[Sequence[float]] = None
                     ) -> Tuple[Tuple[float, ...], Tuple[Tuple[np.ndarray, np.ndarray], ...]]:
    """Positive frequencies (ascending) and frames with M u = -beta v, M v = beta u.

    Gauge: the first significant component of the complex eigenvector
    (u + i v)/sqrt(2) is real positive. ``rotation`` turns each frame pair by an
    angle, which keeps the frame equations.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    if M.shape != (d, d) or d % 2:
        raise DegenerateFieldError(f"field matrix must be square of even size, got {M.shape}")
    if np.max(np.abs(M + M.T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
        raise DegenerateFieldError("field matrix is not skew-symmetric")
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.min() < 1e-10 * sv.max():
        raise DegenerateFieldError(f"field matrix is singular (min/max singular value "
                                   f"{sv.min() / sv.max():.2e})", {'singular_values': sv})
    values, vectors = np.linalg.eigh(-1j * M)
    order = np.argsort(values)[d // 2:]
    beta = values[order]
    for j in range(len(beta) - 1):
        if beta[j + 1] - beta[j] < BETA_GAP_TOL * beta[j + 1]:
            vector = [0] * len(beta)
            vector[j], vector[j + 1] = 1, -1
            raise ResonanceError(f"frequencies {beta[j]:.12g} and {beta[j + 1]:.12g} coincide",
                                 vector, complex(beta[j + 1] - beta[j]))

    frames = []
    for j, idx in enumerate(order):
        eps = vectors[:, idx]
        significant = np.flatnonzero(np.abs(eps) > 1e-8 * np.abs(eps).max())[0]
        eps = eps * np.exp(-1j * np.angle(eps[significant]))
        if rotation is not None:
            eps = eps * np.exp(1j * rotation[j])
        u = math.sqrt(2) * eps.real
        v = math.sqrt(2) * eps.imag
        frames.append((u, v))
    return tuple(float(b) for b in beta), tuple(frames)


def intensity(sys: MagneticSystem, q: Sequence[float]) -> float:
    """b(q) = sum of positive frequencies = half the sum of singular values."""
    sv = np.linalg.svd(magnetic_matrix(sys, q), compute_uv=False)
    return 0.5 * float(np.sum(sv))


def intensity_many(sys: MagneticSystem, points: np.ndarray) -> np.ndarray:
    sv = np.linalg.svd(magnetic_matrices(sys, points), compute_uv=False)
    return 0.5 * np.sum(sv, axis=-1)


def gradient_intensity(sys: MagneticSystem, q: Sequence[float], step: float = GRADIENT_STEP) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    grad = np.zeros_like(q)
    for i in range(len(q)):
        e = np.zeros_like(q)
        e[i] = step
        grad[i] = (intensity(sys, q + e) - intensity(sys, q - e)) / (2 * step)
    return grad


def hessian_intensity(sys: MagneticSystem, q: Sequence[float], step: float = HESSIAN_STEP) -> np.ndarray:
    """Central-difference Hessian of b."""
    q = np.asarray(q, dtype=float)
    d = len(q)
    H = np.zeros((d, d))
    b_center = intensity(sys, q)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        H[i, i] = (intensity(sys, q + ei) - 2 * b_center + intensity(sys, q - ei)) / step ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            value = (intensity(sys, q + ei + ej) - intensity(sys, q + ei - ej)
                     - intensity(sys, q - ei + ej) + intensity(sys, q - ei - ej)) / (4 * step ** 2)
            H[i, j] = H[j, i] = value
    return H


# ---------------------------------------------------------------------------
# Well search and assumption checks
# ---------------------------------------------------------------------------

def _grid_start(sys: MagneticSystem) -> np.ndarray:
    per_axis = 41 if sys.dimension == 2 else 9
    axes = [np.linspace(-0.9 * b, 0.9 * b, per_axis) for b in sys.box]
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, sys.dimension)
    values = intensity_many(sys, grid)
    return grid[int(np.argmin(values))]


def find_resonance(beta: Sequence[float], cap: int, tol: float = None
                   ) -> Optional[Tuple[int, ...]]:
    """Smallest nonzero integer vector (l1 norm <= cap) with <alpha, beta> ~ 0."""
    tol = Config.RESONANCE_TOL if tol is None else tol
    beta = np.asarray(beta, dtype=float)
    scale = tol * float(np.linalg.norm(beta))
    n = len(beta)
    for k in range(1, cap + 1):
        for alpha in itertools.product(range(-k, k + 1), repeat=n):
            if sum(abs(a) for a in alpha) != k:
                continue
            if abs(float(np.dot(alpha, beta))) < scale:
                vector = tuple(int(a) for a in alpha)
                first = next(a for a in vector if a)
                return vector if first > 0 else tuple(-a for a in vector)
    return None


def resonance_order(beta: Sequence[float], cap: int, tol: float = None) -> float:
    """Minimal |alpha| of a resonance, or math.inf when none exists up to ``cap``."""
    vector = find_resonance(beta, cap, tol)
    return math.inf if vector is None else sum(abs(a) for a in vector)


def find_well(sys: MagneticSystem, q_init: Optional[Sequence[float]] = None, tol: float = 1e-8,
              cap: int = 12, strict: bool = True, rotation: Optional[Sequence[float]] = None
              ) -> WellData:
    """Minimize b with finite-difference derivatives (trust-region Newton).

    With ``strict`` a degenerate Hessian or coinciding frequencies raise;
    otherwise they are left for validate_assumptions to report.
    """
    start = np.asarray(q_init, dtype=float) if q_init is not None else _grid_start(sys)
    if len(start) != sys.dimension:
        raise AssumptionError(f"q_init has {len(start)} coordinates for d={sys.dimension}")

    def fun(q):
        return intensity(sys, q)

    def jac(q):
        return gradient_intensity(sys, q)

    def hess(q):
        return hessian_intensity(sys, q)

    result = optimize.minimize(fun, start, jac=jac, hess=hess, method='trust-exact',
                               options={'gtol': tol, 'maxiter': 200})
    q0 = np.asarray(result.x, dtype=float)
    grad_norm = float(np.linalg.norm(jac(q0)))
    if grad_norm >= tol:
        raise ConvergenceError(f"well search stopped at |grad b| = {grad_norm:.2e} after {result.nit} steps",
                               {'q': q0, 'grad_norm': grad_norm, 'message': str(result.message)})

    margin = 2 * HESSIAN_STEP
    if not sys.inside_box(q0, margin):
        raise AssumptionError(f"minimizer {q0} is within {margin} of the domain box",
                              {'q0': q0.tolist(), 'box': list(sys.box)})

    M = magnetic_matrix(sys, q0)
    b0 = intensity(sys, q0)
    H = hessian_intensity(sys, q0)
    hess_min = float(np.linalg.eigvalsh(H).min())
    if strict and hess_min <= 1e-8 * max(1.0, abs(b0)):
        raise DegenerateWellError(f"Hessian of b at the well is not positive definite "
                                  f"(min eigenvalue {hess_min:.3e})", {'hess_b': H})

    try:
        beta, frames = skew_frequencies(M, rotation)
    except ResonanceError:
        if strict:
            raise
        values = np.sort(np.abs(np.linalg.eigvals(M).imag))[::2]
        beta, frames = tuple(float(b) for b in values), None

    vector = find_resonance(beta, cap)
    r0 = math.inf if vector is None else sum(abs(a) for a in vector)
    logger.info(f"Well at q0={np.round(q0, 10).tolist()} b0={b0:.12g} beta={[round(b, 10) for b in beta]} "
                f"r0={'inf' if vector is None else r0} ({result.nit} steps)")
    return WellData(q0=q0, b0=b0, beta=beta, frames=frames, hess_b=H, r0=r0,
                    resonance_vector=vector, field_matrix=M, iterations=int(result.nit),
                    diagnostics={'grad_norm': grad_norm})


def sublevel_box(sys: MagneticSystem, b1: float, points: Optional[int] = None) -> Dict[str, Any]:
    """Bounding box of {b <= b1} located on a grid over the domain box."""
    d = sys.dimension
    if points is None:
        points = 201 if d == 2 else 21
    points = min(points, max(3, int(Config.WEYL_MAX_POINTS ** (1.0 / d))))
    axes = [np.linspace(-b, b, points) for b in sys.box]
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, d)
    inside = intensity_many(sys, grid) <= b1
    if not inside.any():
        return {'empty': True, 'touches_boundary': False, 'lower': None, 'upper': None}
    selected = grid[inside]
    steps = np.array([2 * b / (points - 1) for b in sys.box])
    box = np.array(sys.box)
    on_edge = np.any(np.isclose(np.abs(selected), box), axis=1)
    lower = np.maximum(selected.min(axis=0) - steps, -box)
    upper = np.minimum(selected.max(axis=0) + steps, box)
    return {'empty': False, 'touches_boundary': bool(on_edge.any()), 'lower': lower, 'upper': upper}


def validate_assumptions(sys: MagneticSystem, well: WellData, b1: Optional[float] = None
                         ) -> Dict[str, Any]:
    """Pass/fail report with measured margins; never raises."""
    report: Dict[str, Any] = {}

    hess_eigs = np.linalg.eigvalsh(well.hess_b)
    report['well_nondegenerate'] = {
        'passed': bool(hess_eigs.min() > 1e-8 * max(1.0, well.b0)),
        'min_hessian_eigenvalue': float(hess_eigs.min()),
    }

    if well.field_matrix is not None:
        sv = np.linalg.svd(well.field_matrix, compute_uv=False)
        ratio = float(sv.min() / sv.max()) if sv.max() > 0 else 0.0
    else:
        ratio = 0.0
    report['field_invertible'] = {'passed': ratio >= 1e-10, 'singular_value_ratio': ratio}

    beta = np.asarray(well.beta)
    gaps = np.diff(beta) / beta[1:] if len(beta) > 1 else np.array([])
    min_gap = float(gaps.min()) if gaps.size else None
    report['frequencies_simple'] = {
        'passed': min_gap is None or min_gap >= BETA_GAP_TOL,
        'min_relative_gap': min_gap,
    }

    distance = float(min(b - abs(x) for x, b in zip(well.q0, sys.box)))
    report['box_distance'] = {'passed': distance > 2 * HESSIAN_STEP, 'distance': distance}

    report['resonance'] = {
        'r0': well.r0 if well.r0_finite else 'inf',
        'vector': list(well.resonance_vector) if well.resonance_vector else None,
    }

    if b1 is not None:
        level = sublevel_box(sys, b1)
        report['sublevel_in_box'] = {
            'passed': not level['touches_boundary'],
            'b1': b1,
            'lower': level['lower'],
            'upper': level['upper'],
            'note': 'liminf of b at infinity replaced by containment of {b <= b1} in the domain box',
        }

    report['passed'] = all(entry['passed'] for entry in report.values()
                           if isinstance(entry, dict) and 'passed' in entry)
    if not report['passed']:
        failed = [k for k, v in report.items() if isinstance(v, dict) and v.get('passed') is False]
        logger.warning(f"Assumption checks failed: {', '.join(failed)}")
    return report
