"""
Numerical oracle: finite-difference magnetic Laplacian on a Dirichlet box

The operator (-i hbar grad - A)^2 is discretized on the interior points of a
uniform grid with Peierls link phases exp(-(i/hbar) int A.dl), so the
discrete spectrum is exactly gauge invariant up to the line-integral rule.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.sparse import linalg as sparse_linalg

from .config import Config
from .errors import ConfigError, FitError, SolverError
from .field_model import MagneticSystem

logger = logging.getLogger(__name__)

GAUGE_MODES = ('midpoint', 'simpson')
SOLVER_METHODS = ('auto', 'shift-invert', 'lobpcg', 'dense')
DENSE_LIMIT = 1500
MIN_POINTS = 16


@dataclass(frozen=True)
class DiscretizationSpec:
    """Uniform grid of ``points`` nodes per axis on prod [-L_k, L_k]; boundary nodes are Dirichlet."""

    half_width: Tuple[float, ...]
    points: int
    hbar: float
    gauge: str = 'midpoint'

    def __post_init__(self):
        violations = []
        if not self.half_width or any(L <= 0 for L in self.half_width):
            violations.append(f"half_width must be positive per axis, got {self.half_width}")
        if self.points < MIN_POINTS:
            violations.append(f"points must be >= {MIN_POINTS}, got {self.points}")
        if self.hbar <= 0:
            violations.append(f"hbar must be positive, got {self.hbar}")
        if self.gauge not in GAUGE_MODES:
            violations.append(f"gauge must be one of {GAUGE_MODES}, got {self.gauge!r}")
        if violations:
            raise ConfigError(violations)

    @property
    def dimension(self) -> int:
        return len(self.half_width)

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(2 * L / (self.points - 1) for L in self.half_width)

    @property
    def h_grid(self) -> float:
        return max(self.spacing)

    @property
    def unknowns(self) -> int:
        return (self.points - 2) ** self.dimension

    def interior_axes(self) -> List[np.ndarray]:
        return [-L + h * np.arange(1, self.points - 1) for L, h in zip(self.half_width, self.spacing)]

    def memory_mb(self) -> float:
        nnz = self.unknowns * (2 * self.dimension + 1)
        # csr: complex values + int32 indices, plus the COO staging copy
        return 2 * nnz * (16 + 4 + 4) / 2 ** 20

    @classmethod
    def for_hbar(cls, half_width: Sequence[float], hbar: float, factor: Optional[float] = None,
                 gauge: str = 'midpoint') -> 'DiscretizationSpec':
        """Grid rule h_grid <= factor * sqrt(hbar)."""
        factor = factor or Config.GRID_RULE_FACTOR
        points = int(math.ceil(2 * max(half_width) / (factor * math.sqrt(hbar)))) + 1
        return cls(tuple(float(L) for L in half_width), max(points, MIN_POINTS), hbar, gauge)

    def refined(self) -> 'DiscretizationSpec':
        """Grid with spacing divided by sqrt(2), for Richardson extrapolation."""
        points = int(math.ceil((self.points - 1) * math.sqrt(2))) + 1
        return replace(self, points=points)

    def to_dict(self) -> Dict[str, Any]:
        return {'half_width': list(self.half_width), 'points': self.points, 'hbar': self.hbar,
                'gauge': self.gauge, 'h_grid': self.h_grid}


@dataclass(frozen=True)
class OracleSpectrum:
    spec: Optional[DiscretizationSpec]
    eigenvalues: Tuple[float, ...]
    residuals: Tuple[float, ...]
    method: str
    iterations: Optional[int] = None
    extrapolated: Optional[Tuple[float, ...]] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def best(self) -> Tuple[float, ...]:
        """Richardson values when available, raw eigenvalues otherwise."""
        return self.extrapolated if self.extrapolated is not None else self.eigenvalues

    def rows(self) -> List[Tuple[float, int, float, int, float, float]]:
        spec = self.spec
        return [(spec.hbar if spec else math.nan, spec.points if spec else 0,
                 max(spec.half_width) if spec else math.nan, j + 1, value, residual)
                for j, (value, residual) in enumerate(zip(self.best, self.residuals))]


@dataclass(frozen=True)
class ExpansionFit:
    powers: Tuple[int, ...]
    coefficients: Tuple[float, ...]
    std_errors: Tuple[float, ...]
    residual_exponent: float
    residual_norm: float
    condition: float

    def coefficient(self, k: int) -> float:
        return self.coefficients[self.powers.index(k)]


@dataclass(frozen=True)
class CountResult:
    threshold: float
    count: int
    count_low: int
    count_high: int
    eigenvalues: Tuple[float, ...]

    @property
    def clustered(self) -> bool:
        return self.count_low != self.count_high


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _link_integral(sys: MagneticSystem, k: int, start: np.ndarray, h: float, gauge: str) -> np.ndarray:
    """int_{x}^{x + h e_k} A_k dq_k for every start point."""
    comp = sys.potential[k]
    step = np.zeros(sys.dimension)
    step[k] = h
    mid = comp.evaluate_many(start + 0.5 * step).real
    if gauge == 'midpoint':
        return h * mid
    left = comp.evaluate_many(start).real
    right = comp.evaluate_many(start + step).real
    return h * (left + 4 * mid + right) / 6


def build_operator(sys: MagneticSystem, spec: DiscretizationSpec) -> sparse.csr_matrix:
    """Hermitian Peierls discretization of (-i hbar grad - A)^2 with Dirichlet walls."""
    d = sys.dimension
    if spec.dimension != d:
        raise ConfigError([f"discretization has {spec.dimension} axes for a {d}-dimensional system"])
    if spec.memory_mb() > Config.MAX_MATRIX_MB:
        raise ConfigError([f"operator needs ~{spec.memory_mb():.0f} MB, above MAX_MATRIX_MB="
                           f"{Config.MAX_MATRIX_MB:.0f} (points={spec.points}, d={d})"])
    m = spec.points - 2
    N = spec.unknowns
    hbar = spec.hbar
    axes = spec.interior_axes()
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, d)
    index = np.arange(N).reshape((m,) * d)

    diagonal = sum(2 * hbar ** 2 / h ** 2 for h in spec.spacing)
    rows = [np.arange(N)]
    cols = [np.arange(N)]
    vals = [np.full(N, diagonal, dtype=complex)]
    for k, h in enumerate(spec.spacing):
        src = np.take(index, np.arange(m - 1), axis=k).ravel()
        dst = np.take(index, np.arange(1, m), axis=k).ravel()
        phase = np.exp(-1j * _link_integral(sys, k, grid[src], h, spec.gauge) / hbar)
        hop = -(hbar ** 2 / h ** 2) * phase
        rows += [src, dst]
        cols += [dst, src]
        vals += [hop, hop.conj()]
    matrix = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(N, N)).tocsr()
    logger.debug(f"Operator assembled: {N} unknowns, nnz={matrix.nnz}, h={spec.h_grid:.4g}, hbar={hbar}")
    return matrix


def export_matrix(matrix: sparse.spmatrix, path) -> Path:
    """Coordinate triplets 'i j re im', one nonzero per line, row-major order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, 'w') as f:
        f.write(f"# shape {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        for i in order:
            value = complex(coo.data[i])
            f.write(f"{coo.row[i]} {coo.col[i]} {value.real:.17e} {value.imag:.17e}\n")
    logger.info(f"Matrix exported to {path} ({coo.nnz} entries)")
    return path


# ---------------------------------------------------------------------------
# Eigensolvers
# ---------------------------------------------------------------------------

def _start_vectors(N: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((N, k)) + 1j * rng.standard_normal((N, k))


def _residuals(matrix, values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    R = matrix @ vectors - vectors * values
    norms = np.linalg.norm(vectors, axis=0)
    return np.linalg.norm(R, axis=0) / (norms * np.maximum(1.0, np.abs(values)))


def _solve_dense(matrix, k: int):
    dense = matrix.toarray() if sparse.issparse(matrix) else np.asarray(matrix)
    values, vectors = linalg.eigh(dense, subset_by_index=[0, k - 1])
    return values, vectors, None


def _solve_shift_invert(matrix, k: int, tol: float, seed: int):
    v0 = _start_vectors(matrix.shape[0], 1, seed)[:, 0]
    values, vectors = sparse_linalg.eigsh(matrix, k=k, sigma=0.0, which='LM', v0=v0, tol=tol * 1e-2)
    return values, vectors, None


def _solve_lobpcg(matrix, k: int, tol: float, seed: int):
    block = k + 2
    X = _start_vectors(matrix.shape[0], block, seed)
    ilu = sparse_linalg.spilu(sparse.csc_matrix(matrix), drop_tol=1e-4, fill_factor=10)
    M = sparse_linalg.LinearOperator(matrix.shape, matvec=ilu.solve, dtype=complex)
    values, vectors, history = sparse_linalg.lobpcg(matrix, X, M=M, tol=tol * 0.1, maxiter=1000,
                                                    largest=False, retResidualNormsHistory=True)
    if len(history) >= 1000:
        logger.warning(f"lobpcg did not reach tol={tol:.1e} in {len(history)} iterations")
    return values[:k], vectors[:, :k], len(history)


def lowest_eigenvalues(matrix, k: int = 3, tol: Optional[float] = None, seed: Optional[int] = None,
                       method: str = 'auto', spec: Optional[DiscretizationSpec] = None) -> OracleSpectrum:
    """k smallest eigenvalues of a Hermitian matrix with relative residual below ``tol``."""
    tol = Config.ORACLE_TOL if tol is None else tol
    seed = Config.ORACLE_SEED if seed is None else seed
    if method not in SOLVER_METHODS:
        raise ConfigError([f"oracle.method must be one of {SOLVER_METHODS}, got {method!r}"])
    N = matrix.shape[0]
    if not 1 <= k < N:
        raise ConfigError([f"oracle.k must be in [1, {N - 1}], got {k}"])
    if method == 'auto':
        if N <= DENSE_LIMIT:
            method = 'dense'
        elif spec is not None and spec.dimension > 2:
            method = 'lobpcg'
        else:
            method = 'shift-invert'

    try:
        if method == 'dense':
            values, vectors, iterations = _solve_dense(matrix, k)
        elif method == 'shift-invert':
            values, vectors, iterations = _solve_shift_invert(matrix, k, tol, seed)
        else:
            values, vectors, iterations = _solve_lobpcg(matrix, k, tol, seed)
    except (sparse_linalg.ArpackNoConvergence, np.linalg.LinAlgError, RuntimeError) as e:
        raise SolverError(f"{method} eigensolver failed: {e}", details={'method': method}) from e

    values = np.real(values)
    order = np.argsort(values)
    values = values[order]
    vectors = vectors[:, order]
    residuals = _residuals(matrix, values, vectors)
    if np.any(residuals >= tol):
        raise SolverError(f"{method} eigensolver residuals {np.max(residuals):.2e} above tol={tol:.1e}",
                          residuals, {'method': method, 'eigenvalues': values.tolist()})
    if values[0] < -10 * tol:
        logger.warning(f"Negative eigenvalue {values[0]:.3e} from a nonnegative operator")
    return OracleSpectrum(spec=spec, eigenvalues=tuple(float(v) for v in values),
                          residuals=tuple(float(r) for r in residuals), method=method,
                          iterations=iterations)


def solve_spec(sys: MagneticSystem, spec: DiscretizationSpec, k: int = 3, tol: Optional[float] = None,
               seed: Optional[int] = None, method: str = 'auto', richardson: bool = False
               ) -> OracleSpectrum:
    """Assemble and solve one discretization, optionally with Richardson extrapolation."""
    coarse = lowest_eigenvalues(build_operator(sys, spec), k, tol, seed, method, spec)
    if not richardson:
        return coarse
    fine_spec = spec.refined()
    fine = lowest_eigenvalues(build_operator(sys, fine_spec), k, tol, seed, method, fine_spec)
    h1, h2 = spec.h_grid, fine_spec.h_grid
    extrapolated = tuple((l2 * h1 ** 2 - l1 * h2 ** 2) / (h1 ** 2 - h2 ** 2)
                         for l1, l2 in zip(coarse.eigenvalues, fine.eigenvalues))
    return replace(fine, extrapolated=extrapolated,
                   diagnostics={'coarse': list(coarse.eigenvalues), 'coarse_points': spec.points})


def hbar_sweep(sys: MagneticSystem, hbars: Sequence[float], k: int = 3,
               half_width: Optional[Sequence[float]] = None, grid_factor: Optional[float] = None,
               points: Optional[int] = None, gauge: str = 'midpoint', tol: Optional[float] = None,
               seed: Optional[int] = None, method: str = 'auto', richardson: bool = False,
               threads: Optional[int] = None) -> List[OracleSpectrum]:
    """One OracleSpectrum per hbar, sorted by hbar."""
    if not hbars:
        return []
    half_width = tuple(half_width or sys.box)

    def spec_for(hbar: float) -> DiscretizationSpec:
        if points is not None:
            return DiscretizationSpec(half_width, points, hbar, gauge)
        return DiscretizationSpec.for_hbar(half_width, hbar, grid_factor, gauge)

    def run(hbar: float) -> OracleSpectrum:
        spec = spec_for(hbar)
        result = solve_spec(sys, spec, k, tol, seed, method, richardson)
        logger.info(f"Oracle hbar={hbar:g} points={spec.points}: "
                    f"{[round(v / hbar, 6) for v in result.best]} (lambda/hbar)")
        return result

    with ThreadPoolExecutor(max_workers=threads or Config.THREADS) as pool:
        results = list(pool.map(run, sorted(float(h) for h in hbars)))
    return results


# ---------------------------------------------------------------------------
# Fits and counts
# ---------------------------------------------------------------------------

def _design(hbars: np.ndarray, powers: Sequence[float]) -> np.ndarray:
    return np.column_stack([hbars ** (p / 2) for p in powers])


def _extra_power(hbars: np.ndarray, values: np.ndarray, X: np.ndarray, lo: float, hi: float) -> float:
    """Exponent p minimizing the residual of the fit with one free extra term hbar^p."""

    def misfit(p: float) -> float:
        design = np.column_stack([X, hbars ** p])
        coef = linalg.lstsq(design, values)[0]
        return float(np.linalg.norm(values - design @ coef))

    grid = np.arange(lo, hi + 1e-9, 0.05)
    scores = [misfit(p) for p in grid]
    best = int(np.argmin(scores))
    left = grid[max(best - 1, 0)]
    right = grid[min(best + 1, len(grid) - 1)]
    if right <= left:
        return float(grid[best])
    result = optimize.minimize_scalar(misfit, bounds=(left, right), method='bounded',
                                      options={'xatol': 1e-6})
    return float(result.x)


def fit_expansion(hbars: Sequence[float], values: Sequence[float], powers: Sequence[int]) -> ExpansionFit:
    """Least squares lambda(hbar) ~ sum_k c_k hbar^(k/2) over the given k."""
    h = np.asarray(hbars, dtype=float)
    y = np.asarray(values, dtype=float)
    powers = tuple(int(p) for p in powers)
    if len(h) != len(y):
        raise FitError(f"{len(h)} hbar values for {len(y)} samples")
    distinct = np.unique(h)
    if len(distinct) < len(powers) + 2:
        raise FitError(f"need at least {len(powers) + 2} distinct hbar values, got {len(distinct)}",
                       {'samples': len(distinct), 'powers': list(powers)})
    if distinct.max() < 4 * distinct.min():
        raise FitError(f"hbar samples span a factor {distinct.max() / distinct.min():.2f} < 4",
                       {'min': float(distinct.min()), 'max': float(distinct.max())})
    X = _design(h, powers)
    condition = float(np.linalg.cond(X))
    if condition > 1e12:
        raise FitError(f"design matrix condition number {condition:.2e} > 1e12", {'condition': condition})

    coef, _, _, _ = linalg.lstsq(X, y)
    residual = y - X @ coef
    dof = len(y) - len(powers)
    sigma2 = float(residual @ residual) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    std = np.sqrt(np.maximum(np.diag(cov), 0.0))

    norm = float(np.linalg.norm(residual))
    if norm <= 1e-12 * max(1.0, float(np.linalg.norm(y))):
        exponent = math.nan
    else:
        top = max(powers) / 2
        exponent = _extra_power(h, y, X, min(powers) / 2 + 0.05, top + 3.0)
    logger.debug(f"Fit powers {powers}: {coef.tolist()} residual {norm:.2e} exponent {exponent:.3f}")
    return ExpansionFit(powers=powers, coefficients=tuple(float(c) for c in coef),
                        std_errors=tuple(float(s) for s in std), residual_exponent=exponent,
                        residual_norm=norm, condition=condition)


def count_below(sys: MagneticSystem, spec: DiscretizationSpec, threshold: float,
                tol: Optional[float] = None, margin: float = 0.05, band: float = 1e-3,
                seed: Optional[int] = None, k0: int = 16) -> CountResult:
    """Number of eigenvalues <= threshold, widening the block until it clears threshold*(1+margin)."""
    matrix = build_operator(sys, spec)
    N = matrix.shape[0]
    k = min(k0, N - 1)
    while True:
        spectrum = lowest_eigenvalues(matrix, k, tol, seed, 'dense' if N <= DENSE_LIMIT else 'shift-invert',
                                      spec)
        values = np.asarray(spectrum.eigenvalues)
        if values[-1] > threshold * (1 + margin) or k >= N - 1:
            break
        k = min(2 * k, N - 1)
    count = int(np.sum(values <= threshold))
    low = int(np.sum(values <= threshold * (1 - band)))
    high = int(np.sum(values <= threshold * (1 + band)))
    if low != high:
        logger.warning(f"Eigenvalues cluster at threshold {threshold:g}: count in [{low}, {high}]")
    logger.info(f"count_below hbar={spec.hbar:g} threshold={threshold:g}: {count} (block {k})")
    return CountResult(threshold=threshold, count=count, count_low=low, count_high=high,
                       eigenvalues=tuple(float(v) for v in values[values <= threshold * (1 + margin)]))
