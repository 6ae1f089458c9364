import math

import numpy as np
import pytest

from src.config import RunConfig
from src.field_model import find_well
from src.jetcalc import REAL, GradeBound, Jet
from src.pipeline import NormalFormPipeline
from src.spectral_predictor import (band_floor, enumerate_bands, harmonic_levels, landau_levels,
                                    weyl_count)


@pytest.fixture(scope='module')
def quadratic_pipeline():
    return NormalFormPipeline(RunConfig.from_preset('quadratic-well-2d'))


def test_harmonic_levels_nonresonant():
    levels = harmonic_levels((1.0, math.sqrt(2)), 3)
    energies = [level.energy for level in levels]
    assert energies == pytest.approx([1 + math.sqrt(2), 3 + math.sqrt(2), 1 + 3 * math.sqrt(2)])
    assert all(level.multiplicity == 1 for level in levels)
    assert levels[0].indices == ((0, 0),)


def test_harmonic_levels_group_ties():
    levels = harmonic_levels((1.0, 1.0), 3)
    assert levels[0].energy == pytest.approx(2.0)
    assert levels[1].multiplicity == 2
    assert set(levels[1].indices) == {(0, 1), (1, 0)}


def test_harmonic_levels_rejects_nonpositive():
    with pytest.raises(ValueError):
        harmonic_levels((1.0, 0.0), 2)


def test_landau_levels():
    assert landau_levels(0.1, 1.0, 3) == pytest.approx([0.1, 0.3, 0.5])
    assert landau_levels(0.1, -2.0, 2) == pytest.approx([0.2, 0.6])


def test_enumerate_bands(quadratic_well, blocks_4d):
    well = find_well(quadratic_well)
    assert enumerate_bands(well, 3.0) == [(0,), (1,)]
    assert enumerate_bands(well, 0.5) == []
    assert band_floor(well, (2,), 2.0) == pytest.approx(5.0)

    well4 = find_well(blocks_4d, q_init=[0.2, -0.1, 0.1, 0.3])
    b0 = 1 + math.sqrt(2)
    bands = enumerate_bands(well4, b0 + 2.5)
    assert bands[0] == (0, 0)
    assert (1, 0) in bands
    # 3 + 3 sqrt 2 exceeds b0 + 2.5 at the well
    assert (0, 1) not in bands


def test_weyl_integral_of_quadratic_well(quadratic_well):
    """int_{b <= 3} b dq over the disk |q|^2 <= 2 is 4 pi"""
    well = find_well(quadratic_well)
    result = weyl_count(quadratic_well, well, 3.0, hbar=0.05)
    assert result.integral == pytest.approx(4 * math.pi, rel=1e-2)
    assert result.count_at(0.05) == pytest.approx(2 / 0.05, rel=1e-2)
    assert result.count == result.count_at(0.05)
    # in 2D the two integrands coincide
    assert result.integrand_difference < 1e-9 * result.integral


def test_weyl_quadrature_is_converged(quadratic_well):
    well = find_well(quadratic_well)
    coarse = weyl_count(quadratic_well, well, 3.0, points=200)
    fine = weyl_count(quadratic_well, well, 3.0, points=400)
    assert abs(coarse.integral / fine.integral - 1) < 5e-3


def test_weyl_below_the_well_is_empty(quadratic_well):
    well = find_well(quadratic_well)
    result = weyl_count(quadratic_well, well, 0.5)
    assert result.integral == 0.0
    assert result.count_at(0.1) == 0.0


def test_quadratic_well_prediction(quadratic_pipeline):
    prediction = quadratic_pipeline.prediction
    assert prediction.b0 == pytest.approx(1.0, abs=1e-10)
    assert prediction.nu == pytest.approx((1.0,), abs=1e-8)
    assert prediction.energies == pytest.approx((1.0, 3.0, 5.0), abs=1e-8)
    assert prediction.gap(0) == pytest.approx(2.0, abs=1e-8)
    assert prediction.gap(1) == pytest.approx(2.0, abs=1e-8)
    for coeffs in prediction.coefficients:
        assert coeffs[2] == pytest.approx(1.0, abs=1e-10)
        assert coeffs[3] == pytest.approx(0.0, abs=1e-10)


def test_prediction_offset_shifts_only_hbar_squared(quadratic_pipeline):
    prediction = quadratic_pipeline.prediction
    shifted = prediction.with_offset(0.25)
    assert shifted.c0_offset == 0.25
    for before, after in zip(prediction.coefficients, shifted.coefficients):
        assert after[4] == pytest.approx(before[4] + 0.25)
        assert after[2] == before[2]
    h = 0.05
    assert shifted.value(0, h) - prediction.value(0, h) == pytest.approx(0.25 * h ** 2)


def test_prediction_serializes(quadratic_pipeline):
    data = quadratic_pipeline.prediction.to_dict()
    assert [level['j'] for level in data['levels']] == [1, 2, 3]
    assert data['levels'][0]['m'] == [0]
    assert set(data['flags']) == {'c0_includes_quantization_remainder', 'half_powers_validated'}


@pytest.mark.slow
@pytest.mark.parametrize('changes', [
    {'frame_rotation': [0.8]},
    {'darboux_method': 'homotopy'},
])
def test_prediction_is_chart_independent(quadratic_pipeline, changes):
    """b0, the harmonic energies and the gaps do not depend on frame or Darboux choices."""
    data = quadratic_pipeline.config.to_dict()
    data['truncation'].update(changes)
    other = NormalFormPipeline(RunConfig.from_dict(data)).prediction
    reference = quadratic_pipeline.prediction
    assert other.b0 == pytest.approx(reference.b0, abs=1e-10)
    assert other.energies == pytest.approx(reference.energies, abs=1e-8)
    assert other.gap(0) == pytest.approx(reference.gap(0), abs=1e-8)
    if 'darboux_method' in changes:
        for a, b in zip(other.coefficients, reference.coefficients):
            assert a[4] == pytest.approx(b[4], abs=1e-8)


@pytest.mark.slow
def test_prediction_is_gauge_invariant(quadratic_pipeline):
    """A + grad chi moves c0 with the chart, but not b0, nu, the harmonic energies or the gaps."""
    chi = Jet.monomial((2, 1), (), (), 0, 0.7, GradeBound(0, 3, 3), REAL)
    pipeline = NormalFormPipeline(quadratic_pipeline.config)
    pipeline.system = pipeline.system.gauge_shift(chi)
    other = pipeline.prediction
    reference = quadratic_pipeline.prediction
    assert other.b0 == pytest.approx(reference.b0, abs=1e-10)
    assert other.nu == pytest.approx(reference.nu, abs=1e-8)
    assert other.energies == pytest.approx(reference.energies, abs=1e-8)
    for j in range(len(reference.coefficients) - 1):
        assert other.gap(j) == pytest.approx(reference.gap(j), abs=1e-8)
    for a, b in zip(other.coefficients, reference.coefficients):
        for k in range(4):
            assert a.get(k, 0.0) == pytest.approx(b.get(k, 0.0), abs=1e-8)


@pytest.mark.slow
def test_expansion_against_oracle(quadratic_pipeline):
    report = quadratic_pipeline.compare()
    hbars = np.array([s.spec.hbar for s in report.spectra])
    assert hbars.tolist() == pytest.approx([0.025, 0.035, 0.05, 0.07, 0.1])
    assert report.fit_note is None
    assert report.residual_exponent >= 2.3

    # lambda_1 / hbar -> b0 with an O(hbar) remainder
    b0 = report.prediction.b0
    lowest = np.array([s.best[0] for s in report.spectra])
    remainder = lowest / hbars - b0
    assert np.all(np.diff(remainder) > 0)
    assert np.all((remainder / hbars > 0.5) & (remainder / hbars < 3.0))

    # the gap carries a relative correction of about -4 hbar, so compare its hbar -> 0 limit
    target = report.prediction.gap(0)
    assert target == pytest.approx(2 * report.prediction.nu[0])
    gaps = np.array([g['oracle_gap'] for g in sorted(report.gaps, key=lambda g: g['hbar'])])
    errors = np.abs(gaps / target - 1)
    assert np.all(np.diff(errors) > 0)
    limit = np.polyfit(hbars, gaps, 2)[-1]
    assert abs(limit / target - 1) < 0.05


@pytest.mark.slow
def test_weyl_against_oracle(quadratic_pipeline):
    report = quadratic_pipeline.weyl()
    row = report.rows[0]
    assert row['predicted'] == pytest.approx(40.0, rel=1e-2)
    assert abs(row['relative_difference']) < 0.15
