import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from .errors import ConfigError

load_dotenv()

REPO_ROOT = Path(__file__).resolve().parent.parent


class Config:
    # Output / presets
    OUTPUT_DIR = os.getenv('OUTPUT_DIR', 'output')
    PRESET_DIR = os.getenv('PRESET_DIR', str(REPO_ROOT / 'presets'))

    # Worker pool for hbar sweeps and band integrals
    THREADS = int(os.getenv('THREADS', '1'))

    # Oracle limits
    MAX_MATRIX_MB = float(os.getenv('MAX_MATRIX_MB', '2048'))
    ORACLE_TOL = float(os.getenv('ORACLE_TOL', '1e-8'))
    ORACLE_SEED = int(os.getenv('ORACLE_SEED', '1234'))
    GRID_RULE_FACTOR = float(os.getenv('GRID_RULE_FACTOR', '0.15'))  # h_grid <= factor * sqrt(hbar)

    # Symbolic pipeline tolerances
    JET_DROP_TOL = float(os.getenv('JET_DROP_TOL', '1e-14'))  # relative to the largest coefficient
    RESONANCE_TOL = float(os.getenv('RESONANCE_TOL', '1e-9'))
    FRAME_TOL = float(os.getenv('FRAME_TOL', '1e-10'))
    SYMPLECTIC_TOL = float(os.getenv('SYMPLECTIC_TOL', '1e-10'))

    # Weyl quadrature
    WEYL_POINTS_PER_AXIS = int(os.getenv('WEYL_POINTS_PER_AXIS', '400'))
    WEYL_MAX_POINTS = int(os.getenv('WEYL_MAX_POINTS', '4000000'))

    @classmethod
    def validate(cls):
        """Validate process-wide settings"""
        if cls.THREADS < 1:
            raise ValueError("THREADS must be >= 1")
        if cls.MAX_MATRIX_MB <= 0:
            raise ValueError("MAX_MATRIX_MB must be positive")
        for name in ('JET_DROP_TOL', 'RESONANCE_TOL', 'FRAME_TOL', 'SYMPLECTIC_TOL', 'ORACLE_TOL'):
            value = getattr(cls, name)
            if not (0 < value < 1):
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if cls.GRID_RULE_FACTOR <= 0:
            raise ValueError("GRID_RULE_FACTOR must be positive")
        if cls.WEYL_POINTS_PER_AXIS < 8:
            raise ValueError("WEYL_POINTS_PER_AXIS must be >= 8")


def parse_coefficient(value: Any) -> float:
    """Accept numbers or fraction strings like "1/3"."""
    if isinstance(value, bool):
        raise ValueError(f"not a coefficient: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    raise ValueError(f"not a coefficient: {value!r}")


@dataclass(frozen=True)
class SystemConfig:
    dimension: int
    potential: Tuple[Tuple[Dict[str, Any], ...], ...]
    box: Tuple[float, ...] = ()
    q_init: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class TruncationConfig:
    z_order: int = 4
    w_order: int = 4
    r: int = 5
    resonance_cap: Optional[int] = None
    darboux_method: str = 'lstsq'
    frame_rotation: Optional[Tuple[float, ...]] = None
    well_tol: float = 1e-9

    @property
    def total_order(self) -> int:
        """Largest total degree on which the reduced Hamiltonian is exact."""
        return min(self.z_order, self.w_order + 2)

    @property
    def cap(self) -> int:
        return self.resonance_cap if self.resonance_cap is not None else 2 * self.r


@dataclass(frozen=True)
class OracleConfig:
    hbars: Tuple[float, ...] = ()
    grid_factor: float = 0.15
    k: int = 3
    tol: float = 1e-8
    seed: int = 1234
    half_width: Optional[float] = None
    points: Optional[int] = None
    richardson: bool = True
    method: str = 'auto'
    gauge: str = 'midpoint'
    reference: Optional[str] = None
    field_strength: float = 1.0


@dataclass(frozen=True)
class PredictionConfig:
    n_levels: int = 3
    order: int = 4
    b1: Optional[float] = None
    c0_offset: Optional[float] = None
    weyl_hbars: Tuple[float, ...] = ()
    weyl_points: Optional[int] = None


_SECTIONS = ('system', 'truncation', 'oracle', 'prediction')
_TUPLE_FIELDS = {'box', 'q_init', 'frame_rotation', 'hbars', 'weyl_hbars'}


@dataclass(frozen=True)
class RunConfig:
    """A complete, validated run description loaded from JSON."""

    system: SystemConfig
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    prediction: PredictionConfig = field(default_factory=PredictionConfig)
    name: str = 'run'
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        violations: List[str] = []
        if not isinstance(data, dict):
            raise ConfigError(['config must be a JSON object'])
        known = set(_SECTIONS) | {'name', 'output_dir', 'description'}
        for key in sorted(set(data) - known):
            violations.append(f"{key}: unknown section")

        raw_system = data.get('system')
        if not isinstance(raw_system, dict):
            violations.append('system: missing section')
            raise ConfigError(violations)

        system = _build_section(SystemConfig, 'system', raw_system, violations)
        truncation = _build_section(TruncationConfig, 'truncation', data.get('truncation', {}), violations)
        oracle = _build_section(OracleConfig, 'oracle', data.get('oracle', {}), violations)
        prediction = _build_section(PredictionConfig, 'prediction', data.get('prediction', {}), violations)
        if violations:
            raise ConfigError(violations)

        if not system.box and isinstance(system.dimension, int) and system.dimension > 0:
            system = SystemConfig(system.dimension, system.potential,
                                  tuple([3.0] * system.dimension), system.q_init)

        config = cls(system=system, truncation=truncation, oracle=oracle, prediction=prediction,
                     name=str(data.get('name', 'run')), output_dir=data.get('output_dir'))
        config.validate()
        return config

    @classmethod
    def from_file(cls, path) -> 'RunConfig':
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: invalid JSON ({e})"])
        return cls.from_dict(data)

    @classmethod
    def from_preset(cls, name: str) -> 'RunConfig':
        path = Path(Config.PRESET_DIR) / f"{name}.json"
        if not path.exists():
            available = ', '.join(list_presets()) or 'none'
            raise ConfigError([f"preset '{name}' not found (available: {available})"])
        return cls.from_file(path)

    def validate(self):
        """Collect every violation and raise them together."""
        v: List[str] = []
        s = self.system
        if not isinstance(s.dimension, int) or isinstance(s.dimension, bool) or s.dimension < 2:
            v.append('system.dimension: must be an integer >= 2')
        elif s.dimension % 2 != 0:
            v.append(f'system.dimension: must be even, got {s.dimension}')
        d = s.dimension if isinstance(s.dimension, int) else 0
        if len(s.potential) != d:
            v.append(f'system.potential: expected {d} components, got {len(s.potential)}')
        if all(len(component) == 0 for component in s.potential):
            v.append('system.potential: all components empty (no field)')
        for i, component in enumerate(s.potential):
            for t, term in enumerate(component):
                where = f'system.potential[{i}][{t}]'
                if not isinstance(term, dict) or set(term) != {'coeff', 'powers'}:
                    v.append(f'{where}: expected {{coeff, powers}}')
                    continue
                try:
                    coeff = parse_coefficient(term['coeff'])
                    if not math.isfinite(coeff):
                        v.append(f'{where}.coeff: not finite')
                except (ValueError, ZeroDivisionError):
                    v.append(f'{where}.coeff: not a real number')
                powers = term['powers']
                if (not isinstance(powers, (list, tuple)) or len(powers) != d
                        or any(not isinstance(p, int) or p < 0 for p in powers)):
                    v.append(f'{where}.powers: expected {d} non-negative integers')
        if len(s.box) != d or any(not (b > 0) for b in s.box):
            v.append(f'system.box: expected {d} positive half-widths')
        if s.q_init is not None:
            if len(s.q_init) != d:
                v.append(f'system.q_init: expected {d} coordinates')
            elif len(s.box) == d and any(abs(q) >= b for q, b in zip(s.q_init, s.box)):
                v.append('system.q_init: outside the domain box')

        t = self.truncation
        if t.r < 3:
            v.append(f'truncation.r: must be >= 3, got {t.r}')
        if t.z_order < 2 or t.w_order < 0:
            v.append('truncation.z_order/w_order: need z_order >= 2 and w_order >= 0')
        elif t.r - 1 > t.total_order:
            v.append(f'truncation.r: r-1={t.r - 1} exceeds the exact jet degree {t.total_order} '
                     f'(min(z_order, w_order+2))')
        if t.resonance_cap is not None and t.resonance_cap < t.r:
            v.append(f'truncation.resonance_cap: {t.resonance_cap} smaller than r={t.r}')
        if t.darboux_method not in ('lstsq', 'homotopy'):
            v.append(f"truncation.darboux_method: expected 'lstsq' or 'homotopy', got {t.darboux_method!r}")
        if t.frame_rotation is not None and len(t.frame_rotation) != d // 2:
            v.append(f'truncation.frame_rotation: expected {d // 2} angles')
        if not (t.well_tol > 0):
            v.append('truncation.well_tol: must be positive')

        o = self.oracle
        if any(not (h > 0) for h in o.hbars):
            v.append('oracle.hbars: values must be positive')
        if o.points is not None and o.points < 16:
            v.append(f'oracle.points: must be >= 16, got {o.points}')
        if o.points is not None and d == 4 and o.points > 24:
            v.append('oracle.points: 4D grids are limited to 24 points per axis')
        if o.k < 1:
            v.append('oracle.k: must be >= 1')
        if not (0 < o.tol < 1):
            v.append('oracle.tol: must lie in (0, 1)')
        if not (o.grid_factor > 0):
            v.append('oracle.grid_factor: must be positive')
        if o.half_width is not None and not (o.half_width > 0):
            v.append('oracle.half_width: must be positive')
        if o.method not in ('auto', 'shift-invert', 'lobpcg', 'dense'):
            v.append(f"oracle.method: unknown solver {o.method!r}")
        if o.gauge not in ('midpoint', 'simpson'):
            v.append(f"oracle.gauge: unknown link rule {o.gauge!r}")
        if o.reference not in (None, 'landau'):
            v.append(f"oracle.reference: unknown reference {o.reference!r}")

        p = self.prediction
        if p.n_levels < 1:
            v.append('prediction.n_levels: must be >= 1')
        if p.order < 2 or p.order % 2 != 0:
            v.append(f'prediction.order: must be an even integer >= 2, got {p.order}')
        elif p.order > min(t.total_order, t.r - 1):
            v.append(f'prediction.order: {p.order} needs truncation total degree and r-1 >= {p.order}')
        if p.b1 is not None and not (p.b1 > 0):
            v.append('prediction.b1: must be positive')
        if any(not (h > 0) for h in p.weyl_hbars):
            v.append('prediction.weyl_hbars: values must be positive')
        if p.weyl_points is not None and p.weyl_points < 8:
            v.append('prediction.weyl_points: must be >= 8')

        if v:
            raise ConfigError(v)

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def resolve_output_dir(self, override: Optional[str] = None) -> Path:
        if override:
            return Path(override)
        if self.output_dir:
            return Path(self.output_dir)
        return Path(Config.OUTPUT_DIR) / self.name


def list_presets() -> List[str]:
    preset_dir = Path(Config.PRESET_DIR)
    if not preset_dir.exists():
        return []
    return sorted(p.stem for p in preset_dir.glob('*.json'))


def _build_section(cls, section: str, raw: Any, violations: List[str]):
    if not isinstance(raw, dict):
        violations.append(f'{section}: expected an object')
        return None
    allowed = set(cls.__dataclass_fields__)
    for key in sorted(set(raw) - allowed):
        violations.append(f'{section}.{key}: unknown field')
    kwargs = {}
    for key, value in raw.items():
        if key not in allowed:
            continue
        if key == 'potential':
            if not isinstance(value, list) or any(not isinstance(c, list) for c in value):
                violations.append(f'{section}.potential: expected a list of term lists')
                value = ()
            else:
                value = tuple(tuple(dict(term) if isinstance(term, dict) else term for term in c)
                              for c in value)
        elif key in _TUPLE_FIELDS and value is not None:
            if not isinstance(value, list):
                violations.append(f'{section}.{key}: expected a list')
                continue
            try:
                value = tuple(float(x) for x in value)
            except (TypeError, ValueError):
                violations.append(f'{section}.{key}: expected numbers')
                continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        violations.append(f'{section}: {e}')
        return None
