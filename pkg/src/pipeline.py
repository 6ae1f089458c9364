"""
Run orchestration: one RunConfig, stages computed once and shared

analyze -> reduce -> normal form -> predict, plus the oracle sweep and the
two comparisons (expansion against oracle, Weyl count against oracle).
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional

import numpy as np

from .birkhoff_engine import NormalFormResult, birkhoff_reduce
from .classical_reduction import ReductionResult, reduce_hamiltonian
from .config import Config, RunConfig
from .errors import AssumptionError, ConfigError, FitError
from .field_model import MagneticSystem, WellData, find_well, validate_assumptions
from .numerical_oracle import (CountResult, DiscretizationSpec, OracleSpectrum, count_below,
                               fit_expansion, hbar_sweep)
from .spectral_predictor import SpectralPrediction, WeylCount, landau_levels, predict_eigenvalues, weyl_count

logger = logging.getLogger(__name__)


@dataclass
class ComparisonReport:
    prediction: SpectralPrediction
    spectra: List[OracleSpectrum]
    offset: float
    residual_exponent: float
    rows: List[Dict[str, Any]] = field(default_factory=list)
    gaps: List[Dict[str, Any]] = field(default_factory=list)
    fit_note: Optional[str] = None


@dataclass
class WeylReport:
    weyl: WeylCount
    rows: List[Dict[str, Any]] = field(default_factory=list)


class NormalFormPipeline:
    """Lazily computed stages for one run configuration."""

    def __init__(self, config: RunConfig, threads: Optional[int] = None):
        Config.validate()
        self.config = config
        self.threads = threads or Config.THREADS
        self.system = MagneticSystem.from_config(config.system, config.name)

    # -- stages -------------------------------------------------------------

    @cached_property
    def well(self) -> WellData:
        t = self.config.truncation
        return find_well(self.system, self.config.system.q_init, tol=t.well_tol, cap=t.cap,
                         strict=False, rotation=t.frame_rotation)

    @cached_property
    def assumptions(self) -> Dict[str, Any]:
        return validate_assumptions(self.system, self.well, self.config.prediction.b1)

    def require_assumptions(self):
        if not self.assumptions['passed']:
            failed = [k for k, v in self.assumptions.items() if isinstance(v, dict) and v.get('passed') is False]
            raise AssumptionError(f"assumption checks failed: {', '.join(failed)}", self.assumptions)

    @cached_property
    def reduction(self) -> ReductionResult:
        self.require_assumptions()
        t = self.config.truncation
        return reduce_hamiltonian(self.system, self.well, t.z_order, t.w_order, t.darboux_method,
                                  t.frame_rotation)

    @cached_property
    def normal_form(self) -> NormalFormResult:
        reduction = self.reduction
        return birkhoff_reduce(reduction.hamiltonian.jet, reduction.beta_hat, self.config.truncation.r)

    @cached_property
    def prediction(self) -> SpectralPrediction:
        p = self.config.prediction
        return predict_eigenvalues(self.normal_form, self.well, p.n_levels, p.order, p.c0_offset,
                                   self.config.truncation.cap)

    @cached_property
    def spectra(self) -> List[OracleSpectrum]:
        o = self.config.oracle
        if not o.hbars:
            raise ConfigError(['oracle.hbars: the oracle needs at least one hbar value'])
        return hbar_sweep(self.system, o.hbars, o.k, self._half_width(), o.grid_factor, o.points,
                          gauge=o.gauge, tol=o.tol, seed=o.seed, method=o.method,
                          richardson=o.richardson, threads=self.threads)

    def _half_width(self):
        o = self.config.oracle
        if o.half_width is not None:
            return (o.half_width,) * self.system.dimension
        return self.system.box

    # -- reports ------------------------------------------------------------

    def landau_check(self) -> List[Dict[str, Any]]:
        """Relative distance of every oracle eigenvalue to the nearest Landau level."""
        o = self.config.oracle
        rows = []
        for spectrum in self.spectra:
            hbar = spectrum.spec.hbar
            levels = np.array(landau_levels(hbar, o.field_strength, o.k + 2))
            for j, value in enumerate(spectrum.best):
                nearest = float(levels[np.argmin(np.abs(levels - value))])
                error = abs(value - nearest) / nearest
                rows.append({'hbar': hbar, 'j': j + 1, 'lambda': value, 'landau': nearest,
                             'relative_error': error, 'passed': error < 1e-2})
        failed = [r for r in rows if not r['passed']]
        if failed:
            logger.warning(f"Landau check failed for {len(failed)} eigenvalues "
                           f"(worst {max(r['relative_error'] for r in failed):.2e})")
        return rows

    def compare(self) -> ComparisonReport:
        """Oracle against the through-hbar^2 prediction, with the c0 offset fitted on lambda_1."""
        prediction = self.prediction
        spectra = self.spectra
        hbars = np.array([s.spec.hbar for s in spectra])
        lowest = np.array([s.best[0] for s in spectra])
        base = np.array([prediction.value(0, h, through=4) for h in hbars])

        offset = prediction.c0_offset
        exponent = math.nan
        note = None
        try:
            fit = fit_expansion(hbars, lowest - base, [4])
            offset = prediction.c0_offset + fit.coefficient(4)
            exponent = fit.residual_exponent
        except FitError as e:
            note = e.message
            logger.warning(f"c0 offset fit skipped: {e.message}")
        fitted = prediction.with_offset(offset)

        rows = []
        n = min(prediction.n_levels, min(len(s.best) for s in spectra))
        for spectrum in spectra:
            hbar = spectrum.spec.hbar
            for j in range(n):
                oracle = spectrum.best[j]
                predicted = fitted.value(j, hbar, through=4)
                rows.append({'hbar': hbar, 'j': j + 1, 'oracle': oracle, 'predicted': predicted,
                             'residual': oracle - predicted, 'residual_exponent': exponent})

        gaps = []
        if n >= 2:
            for spectrum in spectra:
                hbar = spectrum.spec.hbar
                gaps.append({'hbar': hbar, 'oracle_gap': (spectrum.best[1] - spectrum.best[0]) / hbar ** 2,
                             'predicted_gap': prediction.gap(0)})
        logger.info(f"Comparison: fitted c0 offset {offset:.6g}, residual exponent {exponent:.3f}")
        return ComparisonReport(prediction=fitted, spectra=spectra, offset=offset,
                                residual_exponent=exponent, rows=rows, gaps=gaps, fit_note=note)

    def weyl(self, with_oracle: bool = True) -> WeylReport:
        p = self.config.prediction
        if p.b1 is None:
            raise ConfigError(['prediction.b1: required for Weyl counts'])
        self.require_assumptions()
        result = weyl_count(self.system, self.well, p.b1, points=p.weyl_points, threads=self.threads)
        rows = []
        for hbar in sorted(p.weyl_hbars):
            predicted = result.count_at(hbar)
            row: Dict[str, Any] = {'b1': p.b1, 'hbar': hbar, 'predicted': predicted}
            if with_oracle:
                counted = self.oracle_count(hbar, p.b1 * hbar)
                row.update({'oracle': counted.count, 'oracle_low': counted.count_low,
                            'oracle_high': counted.count_high,
                            'relative_difference': (counted.count - predicted) / predicted if predicted else math.nan})
            rows.append(row)
        return WeylReport(weyl=result, rows=rows)

    def discretization(self, hbar: float) -> DiscretizationSpec:
        """Grid used by the oracle at this hbar (fixed points, or the sqrt(hbar) rule)."""
        o = self.config.oracle
        if o.points is not None:
            return DiscretizationSpec(tuple(self._half_width()), o.points, hbar, o.gauge)
        return DiscretizationSpec.for_hbar(self._half_width(), hbar, o.grid_factor, o.gauge)

    def oracle_count(self, hbar: float, threshold: float) -> CountResult:
        o = self.config.oracle
        return count_below(self.system, self.discretization(hbar), threshold, tol=o.tol, seed=o.seed)
