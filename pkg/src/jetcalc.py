"""
Truncated jet algebra over (w, z, zbar, hbar)

A Jet is a finite sparse polynomial in the parameter variables w, the phase
variables z / zbar (or x / xi in the real basis) and hbar, truncated by a
GradeBound. The phase grading counts |alpha| + |gamma| + 2l; w-degree is
tracked separately, and an optional total degree (phase + w) gives a grading
that the Moyal product preserves exactly.

Sign conventions (everything downstream relies on these):
  - complex basis: z = x + i xi, canonical pairs (z, zbar) with
    {a, b} = 2i (a_z b_zbar - a_zbar b_z)
  - real basis and w-variables: pairs (xi_j, x_j) and (eta_j, y_j), w ordered
    (y1, eta1, y2, eta2, ...), with {a, b} = a_xi b_x - a_x b_xi
  - the Moyal product is Weyl-compatible: x*xi - xi*x = i hbar and
    |z|^2 * |z|^2 = |z|^4 - hbar^2
  - (i/hbar)[|z_j|^2, z^alpha zbar^gamma] = OSCILLATOR_AD (alpha_j - gamma_j) z^alpha zbar^gamma
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product
from types import MappingProxyType
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import sympy

from .config import Config
from .errors import JetDimensionError, SingularJetError, ValuationError

logger = logging.getLogger(__name__)

COMPLEX = 'complex'
REAL = 'real'

# (i/hbar) ad_{|z_j|^2} acts on z^alpha zbar^gamma hbar^l by OSCILLATOR_AD * (alpha_j - gamma_j)
OSCILLATOR_AD = -2j

_I_POWERS = (1, 1j, -1, -1j)


class MultiIndex(NamedTuple):
    w: Tuple[int, ...]
    alpha: Tuple[int, ...]
    gamma: Tuple[int, ...]
    l: int = 0

    @property
    def phase_degree(self) -> int:
        return sum(self.alpha) + sum(self.gamma) + 2 * self.l

    @property
    def w_degree(self) -> int:
        return sum(self.w)

    @property
    def z_degree(self) -> int:
        return sum(self.alpha) + sum(self.gamma)

    @property
    def total_degree(self) -> int:
        return self.phase_degree + self.w_degree

    @property
    def flat(self) -> Tuple[int, ...]:
        return self.w + self.alpha + self.gamma

    @property
    def is_resonant(self) -> bool:
        return self.alpha == self.gamma


def _order_key(key: MultiIndex):
    return (key.l, sum(key.alpha) + sum(key.gamma), key.alpha, key.gamma, key.w)


def _split_flat(e: Sequence[int], l: int, nw: int, nz: int) -> MultiIndex:
    e = tuple(e)
    return MultiIndex(e[:nw], e[nw:nw + nz], e[nw + nz:], l)


@dataclass(frozen=True)
class GradeBound:
    """Truncation contract: phase degree, w-degree and (optionally) their sum."""

    max_phase_degree: int
    max_w_degree: int
    max_total_degree: Optional[int] = None

    def __post_init__(self):
        if self.max_phase_degree < 0 or self.max_w_degree < 0:
            raise ValueError(f"negative grade bound: {self}")
        if self.max_total_degree is not None and self.max_total_degree < 0:
            raise ValueError(f"negative total bound: {self}")

    @classmethod
    def total(cls, degree: int) -> 'GradeBound':
        return cls(degree, degree, degree)

    def admits_degrees(self, phase: int, wdeg: int) -> bool:
        if phase > self.max_phase_degree or wdeg > self.max_w_degree:
            return False
        return self.max_total_degree is None or phase + wdeg <= self.max_total_degree

    def admits(self, key: MultiIndex) -> bool:
        return self.admits_degrees(key.phase_degree, key.w_degree)

    def meet(self, other: 'GradeBound') -> 'GradeBound':
        totals = [t for t in (self.max_total_degree, other.max_total_degree) if t is not None]
        return GradeBound(min(self.max_phase_degree, other.max_phase_degree),
                          min(self.max_w_degree, other.max_w_degree),
                          min(totals) if totals else None)

    def widen(self, phase: int = 0, w: int = 0, total: int = 0) -> 'GradeBound':
        return GradeBound(self.max_phase_degree + phase, self.max_w_degree + w,
                          None if self.max_total_degree is None else self.max_total_degree + total)

    def to_dict(self) -> Dict[str, Any]:
        return {'max_phase_degree': self.max_phase_degree, 'max_w_degree': self.max_w_degree,
                'max_total_degree': self.max_total_degree}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GradeBound':
        return cls(int(data['max_phase_degree']), int(data['max_w_degree']),
                   None if data.get('max_total_degree') is None else int(data['max_total_degree']))


# ---------------------------------------------------------------------------
# Coefficient field: complex doubles, or exact sympy numbers for algebra tests
# ---------------------------------------------------------------------------

def _scalar(frac: Fraction, ipow: int, exact: bool):
    """frac * i**ipow in the requested field."""
    if exact:
        return sympy.Rational(frac.numerator, frac.denominator) * sympy.I ** (ipow % 4)
    return float(frac) * _I_POWERS[ipow % 4]


def _coerce(value, exact: bool):
    if exact:
        if isinstance(value, Fraction):
            return sympy.Rational(value.numerator, value.denominator)
        return sympy.sympify(value)
    return complex(value)


def _imag_unit(exact: bool):
    return sympy.I if exact else 1j


def _conjugate(value, exact: bool):
    return sympy.conjugate(value) if exact else value.conjugate()


def _canonical(terms: Dict[MultiIndex, Any], bound: GradeBound, exact: bool) -> Dict[MultiIndex, Any]:
    if exact:
        items = []
        for key, c in terms.items():
            if not bound.admits(key):
                continue
            c = sympy.expand(c)
            if c != 0:
                items.append((key, c))
    else:
        items = [(key, c) for key, c in terms.items() if c != 0 and bound.admits(key)]
        if items:
            cut = Config.JET_DROP_TOL * max(abs(c) for _, c in items)
            items = [(key, c) for key, c in items if abs(c) > cut]
    items.sort(key=lambda kc: _order_key(kc[0]))
    return dict(items)


def flat_index(kind: str, j: int, nw: int, nz: int) -> int:
    """Position of a variable in the flat (w, alpha, gamma) exponent vector."""
    if kind == 'w':
        limit, offset = nw, 0
    elif kind in ('z', 'x', 'alpha'):
        limit, offset = nz, nw
    elif kind in ('zbar', 'xi', 'gamma'):
        limit, offset = nz, nw + nz
    else:
        raise ValueError(f"unknown variable kind {kind!r}")
    if not 0 <= j < limit:
        raise JetDimensionError(f"{kind}[{j}] outside a space with nw={nw}, nz={nz}")
    return offset + j


class Jet:
    """Immutable truncated series. Coefficients are stored in canonical order."""

    __slots__ = ('nw', 'nz', 'basis', 'exact', 'bound', '_terms', '_graded')

    def __init__(self, nw: int, nz: int, bound: GradeBound, terms: Optional[Dict] = None,
                 basis: str = COMPLEX, exact: bool = False):
        if nw < 0 or nz < 0:
            raise JetDimensionError(f"negative variable count nw={nw}, nz={nz}")
        if basis not in (COMPLEX, REAL):
            raise ValueError(f"unknown basis {basis!r}")
        collected: Dict[MultiIndex, Any] = {}
        for raw_key, value in (terms or {}).items():
            key = self._check_key(raw_key, nw, nz)
            collected[key] = collected.get(key, 0) + _coerce(value, exact)
        self._init(nw, nz, bound, basis, exact, collected)

    def _init(self, nw, nz, bound, basis, exact, terms):
        self.nw = nw
        self.nz = nz
        self.bound = bound
        self.basis = basis
        self.exact = exact
        self._terms = _canonical(terms, bound, exact)
        self._graded = None

    @staticmethod
    def _check_key(raw_key, nw: int, nz: int) -> MultiIndex:
        w, alpha, gamma, l = raw_key
        key = MultiIndex(tuple(int(v) for v in w), tuple(int(v) for v in alpha),
                         tuple(int(v) for v in gamma), int(l))
        if len(key.w) != nw or len(key.alpha) != nz or len(key.gamma) != nz:
            raise JetDimensionError(f"multi-index {raw_key} does not fit nw={nw}, nz={nz}")
        if min(key.flat + (key.l,), default=0) < 0:
            raise ValueError(f"negative exponent in {raw_key}")
        return key

    def _like(self, terms: Dict[MultiIndex, Any], bound: Optional[GradeBound] = None,
              basis: Optional[str] = None) -> 'Jet':
        jet = Jet.__new__(Jet)
        jet._init(self.nw, self.nz, bound or self.bound, basis or self.basis, self.exact, terms)
        return jet

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, nw: int, nz: int, bound: GradeBound, basis: str = COMPLEX,
             exact: bool = False) -> 'Jet':
        return cls(nw, nz, bound, None, basis, exact)

    @classmethod
    def constant(cls, value, nw: int, nz: int, bound: GradeBound, basis: str = COMPLEX,
                 exact: bool = False) -> 'Jet':
        key = MultiIndex((0,) * nw, (0,) * nz, (0,) * nz, 0)
        return cls(nw, nz, bound, {key: value}, basis, exact)

    @classmethod
    def monomial(cls, w: Sequence[int], alpha: Sequence[int], gamma: Sequence[int], l: int = 0,
                 coeff=1, bound: Optional[GradeBound] = None, basis: str = COMPLEX,
                 exact: bool = False) -> 'Jet':
        if bound is None:
            raise ValueError("monomial needs an explicit bound")
        return cls(len(w), len(alpha), bound, {(w, alpha, gamma, l): coeff}, basis, exact)

    @classmethod
    def variable(cls, index: int, nw: int, nz: int, bound: GradeBound, basis: str = COMPLEX,
                 exact: bool = False) -> 'Jet':
        """The coordinate function at flat position ``index``."""
        e = [0] * (nw + 2 * nz)
        if not 0 <= index < len(e):
            raise JetDimensionError(f"variable {index} outside nw={nw}, nz={nz}")
        e[index] = 1
        return cls(nw, nz, bound, {_split_flat(e, 0, nw, nz): 1}, basis, exact)

    @classmethod
    def hbar(cls, nw: int, nz: int, bound: GradeBound, basis: str = COMPLEX,
             exact: bool = False) -> 'Jet':
        return cls(nw, nz, bound, {MultiIndex((0,) * nw, (0,) * nz, (0,) * nz, 1): 1}, basis, exact)

    def zero_like(self) -> 'Jet':
        return self._like({})

    def constant_like(self, value) -> 'Jet':
        return self._like({MultiIndex((0,) * self.nw, (0,) * self.nz, (0,) * self.nz, 0):
                           _coerce(value, self.exact)})

    def variable_like(self, index: int) -> 'Jet':
        return Jet.variable(index, self.nw, self.nz, self.bound, self.basis, self.exact)

    # -- inspection ---------------------------------------------------------

    @property
    def space(self) -> Tuple[int, int, str, bool]:
        return (self.nw, self.nz, self.basis, self.exact)

    @property
    def terms(self):
        return MappingProxyType(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, key) -> Any:
        w, alpha, gamma, l = key
        return self._terms.get(MultiIndex(tuple(w), tuple(alpha), tuple(gamma), int(l)), 0)

    def constant_term(self):
        return self._terms.get(MultiIndex((0,) * self.nw, (0,) * self.nz, (0,) * self.nz, 0), 0)

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self):
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def max_abs(self) -> float:
        if not self._terms:
            return 0.0
        return max(abs(complex(c)) for c in self._terms.values())

    def phase_valuation(self) -> Optional[int]:
        if not self._terms:
            return None
        return min(key.phase_degree for key in self._terms)

    def max_phase(self) -> Optional[int]:
        if not self._terms:
            return None
        return max(key.phase_degree for key in self._terms)

    def _graded_terms(self):
        return [(key.flat, key.l, c) for key, c in self._terms.items()]

    def _groups(self) -> Dict[Tuple[int, int], List[Tuple[Tuple[int, ...], int, Any]]]:
        """Terms bucketed by (phase degree, w-degree)."""
        if self._graded is None:
            groups: Dict[Tuple[int, int], List] = {}
            for key, c in self._terms.items():
                groups.setdefault((key.phase_degree, key.w_degree), []).append((key.flat, key.l, c))
            self._graded = groups
        return self._graded

    def allclose(self, other: 'Jet', tol: float = 1e-12) -> bool:
        return (self - other).max_abs() <= tol

    def is_real_symbol(self, tol: float = 1e-12) -> bool:
        return (self - self.conj()).max_abs() <= tol

    def __eq__(self, other):
        if not isinstance(other, Jet):
            return NotImplemented
        return self.space == other.space and self._terms == other._terms

    def __hash__(self):
        return hash((self.space, tuple(self._terms.items())))

    def __repr__(self):
        return (f"Jet(nw={self.nw}, nz={self.nz}, basis={self.basis}, terms={len(self._terms)}, "
                f"bound=({self.bound.max_phase_degree}, {self.bound.max_w_degree}, "
                f"{self.bound.max_total_degree}))")

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            return jet_add(self, other)
        return jet_add(self, self.constant_like(other))

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        if isinstance(other, Jet):
            return jet_add(self, other.scale(-1))
        return jet_add(self, self.constant_like(-_coerce(other, self.exact)))

    def __rsub__(self, other):
        return self.scale(-1) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, jet_invert(other))
        value = _coerce(other, self.exact)
        return self.scale(1 / value)

    def scale(self, factor) -> 'Jet':
        factor = _coerce(factor, self.exact)
        return self._like({key: c * factor for key, c in self._terms.items()})

    # -- structural helpers ---------------------------------------------------

    def truncate(self, bound: GradeBound) -> 'Jet':
        return self._like(dict(self._terms), self.bound.meet(bound))

    def with_bound(self, bound: GradeBound) -> 'Jet':
        """Same coefficients under a different bound (drops what no longer fits)."""
        return self._like(dict(self._terms), bound)

    def filter(self, predicate: Callable[[MultiIndex], bool]) -> 'Jet':
        return self._like({key: c for key, c in self._terms.items() if predicate(key)})

    def remap(self, keymap: Callable[[MultiIndex], Optional[MultiIndex]], nw: int, nz: int,
              bound: GradeBound, basis: Optional[str] = None) -> 'Jet':
        """Relabel monomials into another variable space; ``keymap`` may drop terms."""
        out: Dict[MultiIndex, Any] = {}
        for key, c in self._terms.items():
            new = keymap(key)
            if new is None:
                continue
            out[new] = out.get(new, 0) + c
        jet = Jet.__new__(Jet)
        jet._init(nw, nz, bound, basis or self.basis, self.exact, out)
        return jet

    def homogeneous_part(self, degree: int, grading: str = 'phase') -> 'Jet':
        attr = {'phase': 'phase_degree', 'w': 'w_degree', 'z': 'z_degree',
                'total': 'total_degree'}[grading]
        return self.filter(lambda key: getattr(key, attr) == degree)

    def derivative(self, index: int) -> 'Jet':
        """Partial derivative along the flat variable ``index``."""
        nvars = self.nw + 2 * self.nz
        if not 0 <= index < nvars:
            raise JetDimensionError(f"derivative index {index} outside {nvars} variables")
        out = {}
        for key, c in self._terms.items():
            e = list(key.flat)
            power = e[index]
            if power == 0:
                continue
            e[index] -= 1
            out[_split_flat(e, key.l, self.nw, self.nz)] = c * power
        return self._like(out)

    def conj(self) -> 'Jet':
        if self.basis == COMPLEX:
            return self._like({MultiIndex(k.w, k.gamma, k.alpha, k.l): _conjugate(c, self.exact)
                               for k, c in self._terms.items()})
        return self._like({k: _conjugate(c, self.exact) for k, c in self._terms.items()})

    def real_part(self) -> 'Jet':
        return (self + self.conj()).scale(Fraction(1, 2))

    def shift_hbar(self, k: int) -> 'Jet':
        """Multiply by hbar**k; negative k divides and needs every l >= -k."""
        if k < 0 and any(key.l < -k for key in self._terms):
            raise ValuationError(f"jet not divisible by hbar^{-k}")
        return self._like({key._replace(l=key.l + k): c for key, c in self._terms.items()})

    def divide_hbar(self) -> 'Jet':
        return self.shift_hbar(-1)

    def evaluate(self, point: Sequence[float], hbar: float = 0.0) -> complex:
        x = np.asarray(point, dtype=complex)
        if x.shape != (self.nw + 2 * self.nz,):
            raise JetDimensionError(f"point of shape {x.shape} for {self.nw + 2 * self.nz} variables")
        total = 0j
        for e, l, c in self._graded_terms():
            value = complex(c) * hbar ** l
            for xi, p in zip(x, e):
                if p:
                    value *= xi ** p
            total += value
        return total

    def evaluate_many(self, points: np.ndarray, hbar: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=complex)
        if pts.ndim != 2 or pts.shape[1] != self.nw + 2 * self.nz:
            raise JetDimensionError(f"points of shape {pts.shape} for {self.nw + 2 * self.nz} variables")
        out = np.zeros(pts.shape[0], dtype=complex)
        for e, l, c in self._graded_terms():
            out += complex(c) * hbar ** l * np.prod(pts ** np.asarray(e), axis=1)
        return out

    # -- serialization -------------------------------------------------------

    def to_records(self) -> List[Dict[str, Any]]:
        records = []
        for key, c in self._terms.items():
            value = complex(c)
            records.append({'w': list(key.w), 'alpha': list(key.alpha), 'gamma': list(key.gamma),
                            'l': key.l, 're': value.real, 'im': value.imag})
        return records

    def to_dict(self) -> Dict[str, Any]:
        return {'nw': self.nw, 'nz': self.nz, 'basis': self.basis,
                'bound': self.bound.to_dict(), 'terms': self.to_records()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Jet':
        terms = {}
        for rec in data['terms']:
            key = (rec['w'], rec['alpha'], rec['gamma'], rec['l'])
            terms[cls._check_key(key, data['nw'], data['nz'])] = complex(rec['re'], rec['im'])
        return cls(int(data['nw']), int(data['nz']), GradeBound.from_dict(data['bound']),
                   terms, data.get('basis', COMPLEX))


def _check_compatible(a: Jet, b: Jet, op: str):
    if a.space != b.space:
        raise JetDimensionError(f"{op}: jets over different variables {a.space} vs {b.space}",
                                {'left': list(a.space), 'right': list(b.space)})


# ---------------------------------------------------------------------------
# Commutative algebra
# ---------------------------------------------------------------------------

def jet_add(a: Jet, b: Jet) -> Jet:
    _check_compatible(a, b, 'jet_add')
    out = dict(a._terms)
    for key, c in b._terms.items():
        out[key] = out.get(key, 0) + c
    return a._like(out, a.bound.meet(b.bound))


def jet_mul(a: Jet, b: Jet) -> Jet:
    _check_compatible(a, b, 'jet_mul')
    bound = a.bound.meet(b.bound)
    nw, nz = a.nw, a.nz
    out: Dict[MultiIndex, Any] = {}
    b_groups = b._groups()
    for (pa, wa), terms_a in a._groups().items():
        if not bound.admits_degrees(pa, wa):
            continue
        for (pb, wb), terms_b in b_groups.items():
            if not bound.admits_degrees(pa + pb, wa + wb):
                continue
            for ea, la, ca in terms_a:
                for eb, lb, cb in terms_b:
                    key = _split_flat([x + y for x, y in zip(ea, eb)], la + lb, nw, nz)
                    out[key] = out.get(key, 0) + ca * cb
    return a._like(out, bound)


def linear_combination(coeffs: Sequence[Any], jets: Sequence[Jet]) -> Jet:
    if not jets:
        raise ValueError("linear_combination of no jets")
    result = jets[0].zero_like()
    for c, jet in zip(coeffs, jets):
        if c != 0:
            result = result + jet.scale(c)
    return result


def _series_cap(bound: GradeBound) -> int:
    if bound.max_total_degree is not None:
        return bound.max_total_degree + 2
    return bound.max_phase_degree + bound.max_w_degree + 2


def jet_invert(u: Jet) -> Jet:
    """Multiplicative inverse by geometric series around the constant term."""
    c0 = u.constant_term()
    if (c0 == 0) if u.exact else abs(c0) == 0:
        raise SingularJetError("jet_invert: constant term vanishes")
    inv_c0 = 1 / c0
    v = (u - c0).scale(inv_c0)
    result = u.constant_like(1)
    term = result
    for _ in range(_series_cap(u.bound)):
        term = -(term * v)
        if term.is_zero:
            break
        result = result + term
    return result.scale(inv_c0)


def jet_power(u: Jet, s) -> Jet:
    """u**s by the binomial series; s may be a Fraction (exact) or a float."""
    c0 = u.constant_term()
    if (c0 == 0) if u.exact else abs(c0) == 0:
        raise SingularJetError("jet_power: constant term vanishes")
    if u.exact:
        s_exact = sympy.Rational(Fraction(s).numerator, Fraction(s).denominator)
        lead = sympy.Pow(c0, s_exact)
    else:
        lead = complex(c0) ** float(s)
    v = (u - c0).scale(1 / c0)
    coef = Fraction(1) if isinstance(s, (int, Fraction)) else 1.0
    result = u.constant_like(1)
    term = result
    for k in range(1, _series_cap(u.bound) + 1):
        coef = coef * (s - (k - 1)) / k
        term = term * v
        if term.is_zero:
            break
        result = result + term.scale(coef)
    return result.scale(lead)


# ---------------------------------------------------------------------------
# Poisson and Moyal structure
# ---------------------------------------------------------------------------

def canonical_pairs(nw: int, nz: int, basis: str) -> List[Tuple[int, int, bool]]:
    """(P, Q, real_pair) flat indices: w pairs (eta, y), then phase pairs."""
    if nw % 2:
        raise JetDimensionError(f"odd number of w-variables ({nw}) has no symplectic pairing")
    pairs = [(2 * j + 1, 2 * j, True) for j in range(nw // 2)]
    for j in range(nz):
        z, zbar = flat_index('z', j, nw, nz), flat_index('zbar', j, nw, nz)
        if basis == COMPLEX:
            pairs.append((z, zbar, False))
        else:
            pairs.append((zbar, z, True))
    return pairs


def poisson_bracket(a: Jet, b: Jet) -> Jet:
    _check_compatible(a, b, 'poisson_bracket')
    result = a.zero_like().with_bound(a.bound.meet(b.bound))
    for P, Q, real in canonical_pairs(a.nw, a.nz, a.basis):
        term = a.derivative(P) * b.derivative(Q) - a.derivative(Q) * b.derivative(P)
        result = result + (term if real else term.scale(2 * _imag_unit(a.exact)))
    return result


@lru_cache(maxsize=None)
def _pair_options(a_p: int, a_q: int, b_p: int, b_q: int, real: bool, exact: bool):
    """Terms of exp(c box) for one canonical pair on x_P^a_p x_Q^a_q (x) x_P^b_p x_Q^b_q.

    Returns (order, scalar) with the scalar in the coefficient field. The
    complex pair uses c = hbar, a real pair c = hbar/(2i).
    """
    options = []
    for mu in range(min(a_p, b_q) + 1):
        for nu in range(min(a_q, b_p) + 1):
            num = math.perm(a_p, mu) * math.perm(b_q, mu) * math.perm(a_q, nu) * math.perm(b_p, nu)
            frac = Fraction((-1) ** nu * num, math.factorial(mu) * math.factorial(nu))
            k = mu + nu
            ipow = 0
            if real:
                frac /= 2 ** k
                ipow = 3 * k
            options.append((k, _scalar(frac, ipow, exact)))
    return tuple(options)


def _star_terms(a: Jet, b: Jet, bound: GradeBound, odd_only: bool) -> Dict[MultiIndex, Any]:
    pairs = canonical_pairs(a.nw, a.nz, a.basis)
    w_pairs = a.nw // 2
    nw, nz, exact = a.nw, a.nz, a.exact
    total_cap = bound.max_total_degree
    prefactor = 2 if odd_only else 1
    out: Dict[MultiIndex, Any] = {}
    b_groups = b._groups()
    for (pa, wa), terms_a in a._groups().items():
        for (pb, wb), terms_b in b_groups.items():
            # total degree is preserved and phase never decreases under the product
            if pa + pb > bound.max_phase_degree:
                continue
            if total_cap is not None and pa + wa + pb + wb > total_cap:
                continue
            for ea, la, ca in terms_a:
                for eb, lb, cb in terms_b:
                    base = [x + y for x, y in zip(ea, eb)]
                    per_pair = [_pair_options(ea[P], ea[Q], eb[P], eb[Q], real, exact)
                                for P, Q, real in pairs]
                    weight = ca * cb * prefactor
                    for combo in product(*per_pair):
                        order = sum(opt[0] for opt in combo)
                        if odd_only and order % 2 == 0:
                            continue
                        w_order = sum(opt[0] for opt in combo[:w_pairs])
                        if pa + pb + 2 * w_order > bound.max_phase_degree:
                            continue
                        e = list(base)
                        value = weight
                        for (P, Q, _), (k, s) in zip(pairs, combo):
                            if k:
                                e[P] -= k
                                e[Q] -= k
                                value = value * s
                        key = _split_flat(e, la + lb + order, nw, nz)
                        if not bound.admits(key):
                            continue
                        out[key] = out.get(key, 0) + value
    return out


def moyal_star(a: Jet, b: Jet) -> Jet:
    """Weyl-compatible star product truncated to the shared bound."""
    _check_compatible(a, b, 'moyal_star')
    bound = a.bound.meet(b.bound)
    return a._like(_star_terms(a, b, bound, odd_only=False), bound)


def moyal_bracket(a: Jet, b: Jet) -> Jet:
    """a*b - b*a, computed from the odd orders of the product only."""
    _check_compatible(a, b, 'moyal_bracket')
    bound = a.bound.meet(b.bound)
    return a._like(_star_terms(a, b, bound, odd_only=True), bound)


def hbar_bracket(a: Jet, b: Jet) -> Jet:
    """(i/hbar)[a, b], exact on the shared bound."""
    _check_compatible(a, b, 'hbar_bracket')
    bound = a.bound.meet(b.bound)
    raw = _star_terms(a, b, bound.widen(phase=2, w=2, total=2), odd_only=True)
    unit = _imag_unit(a.exact)
    out = {}
    for key, c in raw.items():
        lowered = key._replace(l=key.l - 1)
        if bound.admits(lowered):
            out[lowered] = c * unit
    return a._like(out, bound)


def exp_ad(tau: Jet, a: Jet, order: Optional[int] = None) -> Jet:
    """exp((i/hbar) ad_tau) a, summed until the terms leave the bound."""
    _check_compatible(tau, a, 'exp_ad')
    valuation = tau.phase_valuation()
    if valuation is not None and valuation < 3:
        raise ValuationError(f"exp_ad generator has phase valuation {valuation} < 3",
                             {'valuation': valuation})
    bound = tau.bound.meet(a.bound)
    cap = bound.max_phase_degree + 2 if order is None else order
    result = a.truncate(bound)
    if tau.is_zero:
        return result
    term = result
    for n in range(1, cap + 1):
        term = hbar_bracket(tau, term).scale(Fraction(1, n))
        if term.is_zero:
            break
        result = result + term
    return result


def oscillator(j: int, nw: int, nz: int, bound: GradeBound, basis: str = COMPLEX,
               exact: bool = False) -> Jet:
    """I_j = |z_j|^2 = x_j^2 + xi_j^2."""
    zeros = (0,) * nz
    bump = tuple(1 if i == j else 0 for i in range(nz))
    if basis == COMPLEX:
        terms = {MultiIndex((0,) * nw, bump, bump, 0): 1}
    else:
        twice = tuple(2 * v for v in bump)
        terms = {MultiIndex((0,) * nw, twice, zeros, 0): 1, MultiIndex((0,) * nw, zeros, twice, 0): 1}
    return Jet(nw, nz, bound, terms, basis, exact)


def oscillator_action(a: Jet, j: int) -> Jet:
    """(i/2)(i/hbar)[|z_j|^2, a]; multiplies z^alpha zbar^gamma by alpha_j - gamma_j."""
    I = oscillator(j, a.nw, a.nz, a.bound, a.basis, a.exact)
    return hbar_bracket(I, a).scale(_imag_unit(a.exact) / 2)


# ---------------------------------------------------------------------------
# Bases and grading
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _real_to_complex(p: int, q: int):
    # x^p xi^q = 2^-(p+q) (-i)^q (z + zbar)^p (z - zbar)^q
    acc: Dict[Tuple[int, int], Fraction] = {}
    for s in range(p + 1):
        for t in range(q + 1):
            target = (s + t, p - s + q - t)
            acc[target] = acc.get(target, Fraction(0)) + Fraction(
                math.comb(p, s) * math.comb(q, t) * (-1) ** (q - t), 2 ** (p + q))
    return tuple((target, frac, 3 * q) for target, frac in acc.items() if frac != 0)


@lru_cache(maxsize=None)
def _complex_to_real(a: int, g: int):
    # z^a zbar^g = (x + i xi)^a (x - i xi)^g
    acc: Dict[Tuple[int, int], Fraction] = {}
    for s in range(a + 1):
        for t in range(g + 1):
            target = (s + t, a - s + g - t)
            acc[target] = acc.get(target, Fraction(0)) + Fraction(
                math.comb(a, s) * math.comb(g, t) * (-1) ** (g - t))
    return tuple((target, frac, target[1]) for target, frac in acc.items() if frac != 0)


def complex_convert(a: Jet, direction: str) -> Jet:
    """Change between the (x, xi) and (z, zbar) monomial bases."""
    if direction not in (COMPLEX, REAL):
        raise ValueError(f"unknown basis {direction!r}")
    if a.basis == direction:
        return a
    table = _real_to_complex if direction == COMPLEX else _complex_to_real
    out: Dict[MultiIndex, Any] = {}
    for key, c in a.items():
        per_pair = [table(key.alpha[j], key.gamma[j]) for j in range(a.nz)]
        for combo in product(*per_pair):
            frac = Fraction(1)
            ipow = 0
            for _, f, ip in combo:
                frac *= f
                ipow += ip
            new = MultiIndex(key.w, tuple(t[0][0] for t in combo), tuple(t[0][1] for t in combo), key.l)
            out[new] = out.get(new, 0) + c * _scalar(frac, ipow, a.exact)
    return a._like(out, basis=direction)


def grade_split(a: Jet, N: int) -> Tuple[Jet, Jet]:
    """(terms of phase degree < N, terms of phase degree >= N)."""
    return (a.filter(lambda key: key.phase_degree < N),
            a.filter(lambda key: key.phase_degree >= N))


def embed(a: Jet, nz: int, bound: Optional[GradeBound] = None, basis: Optional[str] = None) -> Jet:
    """View a jet in a space with more phase pairs (new exponents zero)."""
    if nz < a.nz:
        raise JetDimensionError(f"cannot embed nz={a.nz} into nz={nz}")
    pad = (0,) * (nz - a.nz)
    return a.remap(lambda k: MultiIndex(k.w, k.alpha + pad, k.gamma + pad, k.l),
                   a.nw, nz, bound or a.bound, basis)


def w_to_phase(a: Jet, bound: GradeBound) -> Jet:
    """Reinterpret w = (y1, eta1, ...) as real phase variables (x = y, xi = eta)."""
    if a.nz != 0 or a.nw % 2:
        raise JetDimensionError(f"w_to_phase needs an even w-only jet, got nw={a.nw}, nz={a.nz}")
    n = a.nw // 2
    return a.remap(lambda k: MultiIndex((), k.w[0::2], k.w[1::2], k.l), 0, n, bound, REAL)


# ---------------------------------------------------------------------------
# Composition and maps
# ---------------------------------------------------------------------------

def jet_compose(f: Jet, m: 'JetMap', bound: Optional[GradeBound] = None) -> Jet:
    """Substitute m's components for f's variables (hbar passes through)."""
    comps = m.components
    if len(comps) != f.nw + 2 * f.nz:
        raise JetDimensionError(f"jet_compose: map has {len(comps)} components, "
                                f"jet has {f.nw + 2 * f.nz} variables")
    target = comps[0]
    bound = bound or m.bound
    one = target.constant_like(1).with_bound(bound)
    powers: Dict[Tuple[int, ...], Jet] = {(0,) * len(comps): one}

    def power(e: Tuple[int, ...]) -> Jet:
        cached = powers.get(e)
        if cached is not None:
            return cached
        i = max(idx for idx, p in enumerate(e) if p)
        prev = list(e)
        prev[i] -= 1
        value = power(tuple(prev)) * comps[i]
        powers[e] = value
        return value

    out: Dict[MultiIndex, Any] = {}
    for e, l, c in f._graded_terms():
        value = power(e)
        for key, v in value.items():
            shifted = key._replace(l=key.l + l) if l else key
            if bound.admits(shifted):
                out[shifted] = out.get(shifted, 0) + c * v
    return one._like(out, bound)


@dataclass(frozen=True)
class JetMap:
    """Truncated coordinate map: one jet per target coordinate."""

    components: Tuple[Jet, ...]
    source: str = 'source'
    target: str = 'target'

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, 'components', comps)
        if not comps:
            raise JetDimensionError("JetMap needs at least one component")
        space = comps[0].space
        for c in comps[1:]:
            if c.space != space:
                raise JetDimensionError(f"JetMap components over different spaces: {space} vs {c.space}")

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def bound(self) -> GradeBound:
        result = self.components[0].bound
        for c in self.components[1:]:
            result = result.meet(c.bound)
        return result

    @classmethod
    def identity(cls, nw: int, nz: int, bound: GradeBound, basis: str = COMPLEX,
                 exact: bool = False, label: str = 'source') -> 'JetMap':
        comps = [Jet.variable(i, nw, nz, bound, basis, exact) for i in range(nw + 2 * nz)]
        return cls(tuple(comps), label, label)

    @classmethod
    def affine(cls, matrix: np.ndarray, offset: Sequence[float], nw: int, nz: int,
               bound: GradeBound, basis: str = COMPLEX, source: str = 'source',
               target: str = 'target') -> 'JetMap':
        matrix = np.asarray(matrix)
        nvars = nw + 2 * nz
        if matrix.shape[1] != nvars:
            raise JetDimensionError(f"affine map with {matrix.shape[1]} columns for {nvars} variables")
        variables = [Jet.variable(i, nw, nz, bound, basis) for i in range(nvars)]
        comps = []
        for row, c in zip(matrix, offset):
            jet = linear_combination(list(row), variables) + complex(c)
            comps.append(jet)
        return cls(tuple(comps), source, target)

    def compose(self, inner: 'JetMap', bound: Optional[GradeBound] = None) -> 'JetMap':
        """self o inner."""
        return JetMap(tuple(jet_compose(c, inner, bound) for c in self.components),
                      inner.source, self.target)

    def truncate(self, bound: GradeBound) -> 'JetMap':
        return JetMap(tuple(c.truncate(bound) for c in self.components), self.source, self.target)

    def constant_terms(self) -> np.ndarray:
        return np.array([complex(c.constant_term()) for c in self.components])

    def jacobian(self) -> np.ndarray:
        """Linear coefficients at the base point (hbar-free part)."""
        first = self.components[0]
        nvars = first.nw + 2 * first.nz
        J = np.zeros((self.dim, nvars), dtype=complex)
        for i, comp in enumerate(self.components):
            for key, c in comp.items():
                if key.l == 0 and sum(key.flat) == 1:
                    J[i, key.flat.index(1)] += complex(c)
        return J

    def evaluate(self, point: Sequence[float], hbar: float = 0.0) -> np.ndarray:
        return np.array([c.evaluate(point, hbar) for c in self.components])

    def inverse(self, bound: Optional[GradeBound] = None) -> 'JetMap':
        """Inverse of a square w-only map with invertible linear part.

        The result is expressed in the displacement Y = m(w) - m(0) and is found
        by the fixed point x = L^-1 (Y - N(x)), N the nonlinear part.
        """
        first = self.components[0]
        if first.nz != 0 or first.nw != self.dim:
            raise JetDimensionError(f"inverse needs a square w-only map, got {self.dim} components "
                                    f"over nw={first.nw}, nz={first.nz}")
        bound = bound or self.bound
        L = self.jacobian()
        if np.linalg.cond(L) > 1e12:
            raise SingularJetError("JetMap.inverse: linear part is singular",
                                   {'condition': float(np.linalg.cond(L))})
        Linv = np.linalg.inv(L)
        offsets = self.constant_terms()
        Y = [Jet.variable(i, self.dim, 0, bound, first.basis) for i in range(self.dim)]
        nonlinear = []
        for i, comp in enumerate(self.components):
            linear = linear_combination(list(L[i]), Y)
            nonlinear.append(comp.with_bound(bound) - offsets[i] - linear)
        x = [linear_combination(list(Linv[i]), Y) for i in range(self.dim)]
        for _ in range(bound.max_w_degree + 1):
            current = JetMap(tuple(x))
            residual = [Y[k] - jet_compose(nonlinear[k], current, bound) for k in range(self.dim)]
            x = [linear_combination(list(Linv[i]), residual) for i in range(self.dim)]
        return JetMap(tuple(x), self.target, self.source)
