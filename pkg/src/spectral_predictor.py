"""
Spectral predictions from the normal form

Band symbols F^(n)(w) of the reduced operator, the well expansion of the
lowest band into lambda_j(hbar) = sum_k c_{j,k} hbar^(k/2), harmonic level
enumeration, band floors and the Weyl count of eigenvalues below b1*hbar.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .birkhoff_engine import NormalFormResult, WellExpansion, well_reduce
from .config import Config
from .errors import AssumptionError, BoundOverflowError
from .field_model import MagneticSystem, WellData, magnetic_matrices, sublevel_box
from .jetcalc import REAL, GradeBound, Jet

logger = logging.getLogger(__name__)

LEVEL_TIE_TOL = 1e-12
WEYL_CHUNK = 200_000


@dataclass(frozen=True, eq=False)
class BandSymbol:
    """F^(n)(w, hbar) for fixed oscillator quantum numbers n."""

    n: Tuple[int, ...]
    symbol: Jet
    exact_degree: int

    @property
    def reduced(self) -> Jet:
        """F^(n) / hbar, exact through total degree exact_degree - 2."""
        return self.symbol.divide_hbar().with_bound(GradeBound.total(self.exact_degree - 2))

    def leading(self, point: Sequence[float]) -> float:
        """hbar-free part of F^(n)/hbar at a point of Sigma, i.e. b^[n] in chart coordinates."""
        leading = self.reduced.filter(lambda key: key.l == 0)
        return float(leading.evaluate(point).real)


@dataclass(frozen=True)
class HarmonicLevel:
    energy: float
    multiplicity: int
    indices: Tuple[Tuple[int, ...], ...]


@dataclass(frozen=True)
class SpectralPrediction:
    """lambda_j(hbar) = sum_k coefficients[j][k] hbar^(k/2), j = 0..N-1."""

    coefficients: Tuple[Dict[int, float], ...]
    energies: Tuple[float, ...]
    indices: Tuple[Tuple[int, ...], ...]
    b0: float
    c0: float
    nu: Tuple[float, ...]
    order: int
    c0_offset: float = 0.0
    c0_includes_quantization_remainder: bool = False
    half_powers_validated: bool = False
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return len(self.coefficients)

    def value(self, j: int, hbar: float, through: Optional[int] = None) -> float:
        """Predicted lambda_j, summed through hbar^(through/2) (default: all orders)."""
        top = self.order if through is None else through
        return float(sum(c * hbar ** (k / 2) for k, c in self.coefficients[j].items() if k <= top))

    def values(self, hbar: float, through: Optional[int] = None) -> np.ndarray:
        return np.array([self.value(j, hbar, through) for j in range(self.n_levels)])

    def gap(self, j: int, k: int = 4) -> float:
        """Coefficient of hbar^(k/2) in lambda_{j+1} - lambda_j."""
        return self.coefficients[j + 1].get(k, 0.0) - self.coefficients[j].get(k, 0.0)

    def with_offset(self, offset: float) -> 'SpectralPrediction':
        """Same prediction with the hbar^2 constant shifted to c0 + offset."""
        delta = offset - self.c0_offset
        coefficients = []
        for coeffs in self.coefficients:
            coeffs = dict(coeffs)
            if 4 in coeffs:
                coeffs[4] += delta
            coefficients.append(coeffs)
        return replace(self, coefficients=tuple(coefficients), c0_offset=offset)

    def rows(self) -> List[Tuple[int, int, float]]:
        return [(j + 1, k, c) for j, coeffs in enumerate(self.coefficients)
                for k, c in sorted(coeffs.items())]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'b0': self.b0,
            'c0': self.c0,
            'c0_offset': self.c0_offset,
            'nu': list(self.nu),
            'order': self.order,
            'levels': [{'j': j + 1, 'E': E, 'm': list(m), 'coefficients': {str(k): c for k, c in sorted(co.items())}}
                       for j, (E, m, co) in enumerate(zip(self.energies, self.indices, self.coefficients))],
            'flags': {'c0_includes_quantization_remainder': self.c0_includes_quantization_remainder,
                      'half_powers_validated': self.half_powers_validated},
            'diagnostics': self.diagnostics,
        }


@dataclass(frozen=True)
class WeylCount:
    b1: float
    dimension: int
    integral: float
    bands: Tuple[Dict[str, Any], ...]
    volume_form_integral: float
    grid_points: int
    hbar: Optional[float] = None

    @property
    def integrand_difference(self) -> float:
        return abs(self.volume_form_integral - self.integral)

    def count_at(self, hbar: float) -> float:
        if self.integral == 0.0:
            return 0.0
        return self.integral / (2 * math.pi * hbar) ** (self.dimension // 2)

    @property
    def count(self) -> float:
        if self.hbar is None:
            raise ValueError("WeylCount built without hbar; use count_at")
        return self.count_at(self.hbar)

    def rows(self, hbar: Optional[float] = None) -> List[Tuple[Tuple[int, ...], float, float]]:
        hbar = self.hbar if hbar is None else hbar
        scale = (2 * math.pi * hbar) ** (self.dimension // 2)
        return [(tuple(b['n']), b['integral'], b['integral'] / scale) for b in self.bands]


# ---------------------------------------------------------------------------
# Bands
# ---------------------------------------------------------------------------

def _exact_degree(nf: NormalFormResult) -> int:
    bound = nf.H0.bound
    total = bound.max_total_degree if bound.max_total_degree is not None else bound.max_phase_degree
    return min(total, nf.r - 1)


def band_symbol(nf: NormalFormResult, n: Sequence[int],
                beta_hat: Optional[Sequence[Jet]] = None) -> BandSymbol:
    """F^(n) = hbar sum_j beta_hat_j(w)(2n_j+1) + f*(w, hbar(2n+1), hbar)."""
    beta_hat = tuple(beta_hat if beta_hat is not None else nf.beta_hat)
    n = tuple(int(v) for v in n)
    if len(n) != len(beta_hat):
        raise ValueError(f"band index {n} for {len(beta_hat)} oscillators")
    if any(v < 0 for v in n):
        raise ValueError(f"band index must be nonnegative, got {n}")
    degree = _exact_degree(nf)
    bound = GradeBound.total(degree)
    nw = beta_hat[0].nw
    F = Jet.zero(nw, 0, bound, REAL)
    for bj, nj in zip(beta_hat, n):
        F = F + bj.with_bound(bound).real_part().shift_hbar(1).scale(2 * nj + 1)
    for (l, m), coeff in nf.fstar.items():
        weight = math.prod((2 * nj + 1) ** mj for nj, mj in zip(n, m))
        F = F + coeff.with_bound(bound).real_part().shift_hbar(sum(m) + l).scale(weight)
    return BandSymbol(n=n, symbol=F, exact_degree=degree)


def band_floor(well: WellData, n: Sequence[int], c: float) -> float:
    """Lower bound b0 + c|n| for the spectrum of band n, in units of hbar."""
    return well.b0 + c * sum(n)


def enumerate_bands(well: WellData, b1: float, c: Optional[float] = None,
                    at_well: bool = True) -> List[Tuple[int, ...]]:
    """Bands n with band_floor <= b1; ``at_well`` also requires b^[n](q0) <= b1."""
    if c is None:
        c = 2 * min(well.beta)
    if c <= 0:
        raise ValueError(f"band floor slope must be positive, got {c}")
    if b1 < well.b0:
        return []
    n_max = int(math.floor((b1 - well.b0) / c * (1 + 1e-12)))
    bands = []
    for n in itertools.product(range(n_max + 1), repeat=well.pairs):
        if sum(n) > n_max:
            continue
        if at_well and sum((2 * nj + 1) * bj for nj, bj in zip(n, well.beta)) > b1 * (1 + 1e-12):
            continue
        bands.append(tuple(n))
    return sorted(bands, key=lambda n: (sum(n), n))


def harmonic_levels(nu: Sequence[float], N: int) -> List[HarmonicLevel]:
    """Lowest levels sum_j (2m_j+1) nu_j, tie-grouped, covering at least N states."""
    nu = [float(v) for v in nu]
    if not nu or min(nu) <= 0:
        raise ValueError(f"harmonic frequencies must be positive, got {nu}")
    states = sorted(((sum((2 * mj + 1) * vj for mj, vj in zip(m, nu)), m)
                     for m in itertools.product(range(N + 1), repeat=len(nu))),
                    key=lambda item: (item[0], item[1]))
    levels: List[HarmonicLevel] = []
    covered = 0
    i = 0
    while i < len(states) and covered < N:
        energy, first = states[i]
        group = [first]
        i += 1
        while i < len(states) and abs(states[i][0] - energy) <= LEVEL_TIE_TOL * max(1.0, energy):
            group.append(states[i][1])
            i += 1
        levels.append(HarmonicLevel(energy, len(group), tuple(group)))
        covered += len(group)
    return levels


# ---------------------------------------------------------------------------
# Eigenvalue expansion
# ---------------------------------------------------------------------------

def predict_eigenvalues(nf: NormalFormResult, well: WellData, n_levels: int = 3, order: int = 4,
                        c0_offset: Optional[float] = None, resonance_cap: Optional[int] = None
                        ) -> SpectralPrediction:
    """Expansion of the n_levels lowest eigenvalues through hbar^(order/2)."""
    if order < 2 or order % 2:
        raise ValueError(f"prediction order must be even and >= 2, got {order}")
    degree = _exact_degree(nf)
    if order > degree:
        raise BoundOverflowError(f"prediction order {order} needs the normal form exact through degree "
                                 f"{order}, have {degree}", {'order': order, 'available': degree})

    band = band_symbol(nf, (0,) * len(nf.beta_hat))
    reduced = band.reduced
    expansion: WellExpansion = well_reduce(reduced, order - 2, resonance_cap)
    levels = harmonic_levels(expansion.nu, n_levels)

    ordered: List[Tuple[float, Tuple[int, ...], Dict[int, float]]] = []
    for level in levels:
        group = []
        for m in level.indices:
            mu = expansion.level(m)
            group.append((level.energy, m, {k + 2: c for k, c in mu.items()}))
        group.sort(key=lambda item: tuple(item[2][k] for k in sorted(item[2])))
        ordered.extend(group)
    ordered = ordered[:n_levels]

    prediction = SpectralPrediction(
        coefficients=tuple(c for _, _, c in ordered),
        energies=tuple(E for E, _, _ in ordered),
        indices=tuple(m for _, m, _ in ordered),
        b0=expansion.b0,
        c0=expansion.c0,
        nu=expansion.nu,
        order=order,
        diagnostics={
            'band_b0_residual': abs(complex(reduced.constant_term()).real - well.b0),
            'next_band_floor': band_floor(well, (1,) + (0,) * (well.pairs - 1), 2 * min(well.beta)),
            'exact_degree': degree,
        },
    )
    if c0_offset:
        prediction = prediction.with_offset(c0_offset)
    logger.info(f"Prediction: b0={prediction.b0:.12g} nu={[round(v, 10) for v in prediction.nu]} "
                f"c0={prediction.c0:.6g} levels E={[round(E, 8) for E in prediction.energies]}")
    return prediction


# ---------------------------------------------------------------------------
# Weyl count
# ---------------------------------------------------------------------------

def _cell_centers(lower: np.ndarray, upper: np.ndarray, points: int) -> Tuple[np.ndarray, float]:
    steps = (upper - lower) / points
    axes = [lo + (np.arange(points) + 0.5) * h for lo, h in zip(lower, steps)]
    mesh = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, len(lower))
    return mesh, float(np.prod(steps))


def _chunk_frequencies(sys: MagneticSystem, chunk: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    M = magnetic_matrices(sys, chunk)
    beta = np.linalg.eigvalsh(-1j * M)[:, sys.dimension // 2:]
    volume = np.sqrt(np.abs(np.linalg.det(M)))
    return beta, volume


def weyl_count(sys: MagneticSystem, well: WellData, b1: float, hbar: Optional[float] = None,
               points: Optional[int] = None, threads: Optional[int] = None) -> WeylCount:
    """Band sum of int_{b^[n] <= b1} beta_1...beta_{d/2} dq, midpoint quadrature."""
    d = sys.dimension
    level = sublevel_box(sys, b1)
    if level['empty'] or b1 < well.b0:
        return WeylCount(b1=b1, dimension=d, integral=0.0, bands=(), volume_form_integral=0.0,
                         grid_points=0, hbar=hbar)
    if level['touches_boundary']:
        raise AssumptionError(f"sublevel set {{b <= {b1}}} reaches the domain box",
                              {'b1': b1, 'box': list(sys.box), 'lower': level['lower'],
                               'upper': level['upper']})

    points = points or Config.WEYL_POINTS_PER_AXIS
    points = min(points, max(8, int(Config.WEYL_MAX_POINTS ** (1.0 / d))))
    mesh, cell = _cell_centers(np.asarray(level['lower']), np.asarray(level['upper']), points)
    chunks = [mesh[i:i + WEYL_CHUNK] for i in range(0, len(mesh), WEYL_CHUNK)]
    with ThreadPoolExecutor(max_workers=threads or Config.THREADS) as pool:
        results = list(pool.map(lambda ch: _chunk_frequencies(sys, ch), chunks))
    beta = np.concatenate([r[0] for r in results])
    volume = np.concatenate([r[1] for r in results])
    density = np.prod(beta, axis=1)

    c = 2 * float(beta[:, 0].min())
    bands = []
    total = 0.0
    total_volume = 0.0
    for n in enumerate_bands(well, b1, c, at_well=False):
        weights = 2 * np.asarray(n) + 1
        inside = beta @ weights <= b1
        integral = float(density[inside].sum() * cell)
        volume_integral = float(volume[inside].sum() * cell)
        total += integral
        total_volume += volume_integral
        bands.append({'n': list(n), 'integral': integral, 'volume_form_integral': volume_integral,
                      'cells': int(inside.sum())})

    result = WeylCount(b1=b1, dimension=d, integral=total, bands=tuple(bands),
                       volume_form_integral=total_volume, grid_points=len(mesh), hbar=hbar)
    logger.info(f"Weyl integral for b1={b1}: {total:.10g} over {len(bands)} bands "
                f"({points}^{d} cells, integrand difference {result.integrand_difference:.2e})")
    return result


def landau_levels(hbar: float, strength: float = 1.0, k: int = 3) -> List[float]:
    """hbar * strength * (2j+1), j = 0..k-1, for a constant 2D field."""
    return [hbar * abs(strength) * (2 * j + 1) for j in range(k)]
