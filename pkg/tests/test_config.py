import copy

import pytest

from src.config import Config, RunConfig, list_presets, parse_coefficient
from src.errors import ConfigError


def test_presets_are_listed_and_load():
    names = list_presets()
    assert {'quadratic-well-2d', 'landau', 'blocks-4d', 'resonant-4d'} <= set(names)
    for name in names:
        config = RunConfig.from_preset(name)
        assert config.name == name


def test_minimal_config_gets_defaults(minimal_config_dict):
    config = RunConfig.from_dict(minimal_config_dict)
    assert config.truncation.r == 5
    assert config.truncation.total_order == 4
    assert config.truncation.cap == 10
    assert config.oracle.richardson is True
    assert config.system.box == (3.0, 3.0)


def test_odd_dimension_names_the_field(minimal_config_dict):
    data = copy.deepcopy(minimal_config_dict)
    data['system']['dimension'] = 3
    data['system']['potential'] = [[], [], [{'coeff': 1, 'powers': [1, 0, 0]}]]
    data['system']['box'] = [1.0, 1.0, 1.0]
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert any(v.startswith('system.dimension') for v in info.value.violations)
    assert info.value.exit_code == 2


def test_all_violations_reported_together(minimal_config_dict):
    data = copy.deepcopy(minimal_config_dict)
    data['truncation'] = {'r': 2, 'darboux_method': 'magic'}
    data['oracle'] = {'hbars': [0.1, -0.2], 'k': 0}
    data['prediction'] = {'order': 3}
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    fields = {v.split(':')[0] for v in info.value.violations}
    assert {'truncation.r', 'truncation.darboux_method', 'oracle.hbars', 'oracle.k',
            'prediction.order'} <= fields


def test_r_must_fit_the_jet_degree(minimal_config_dict):
    data = copy.deepcopy(minimal_config_dict)
    data['truncation'] = {'z_order': 4, 'w_order': 1, 'r': 5}
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert any('exact jet degree 3' in v for v in info.value.violations)


def test_unknown_sections_and_fields(minimal_config_dict):
    data = copy.deepcopy(minimal_config_dict)
    data['solver'] = {}
    data['oracle'] = {'eigensolver': 'dense'}
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert 'solver: unknown section' in info.value.violations
    assert 'oracle.eigensolver: unknown field' in info.value.violations


def test_missing_file_and_preset(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / 'absent.json')
    bad = tmp_path / 'bad.json'
    bad.write_text('{not json')
    with pytest.raises(ConfigError):
        RunConfig.from_file(bad)
    with pytest.raises(ConfigError) as info:
        RunConfig.from_preset('no-such-preset')
    assert 'quadratic-well-2d' in info.value.message


def test_config_hash_is_stable(minimal_config_dict):
    a = RunConfig.from_dict(minimal_config_dict)
    b = RunConfig.from_dict(copy.deepcopy(minimal_config_dict))
    assert a.config_hash() == b.config_hash()
    changed = copy.deepcopy(minimal_config_dict)
    changed['truncation'] = {'well_tol': 1e-8}
    assert RunConfig.from_dict(changed).config_hash() != a.config_hash()


def test_output_dir_resolution(minimal_config_dict, tmp_path):
    config = RunConfig.from_dict(minimal_config_dict)
    assert config.resolve_output_dir(str(tmp_path)) == tmp_path
    assert config.resolve_output_dir().name == 'minimal'


def test_parse_coefficient():
    assert parse_coefficient('1/3') == pytest.approx(1 / 3)
    assert parse_coefficient(2) == 2.0
    with pytest.raises(ValueError):
        parse_coefficient(True)


def test_process_settings_validate(monkeypatch):
    Config.validate()
    monkeypatch.setattr(Config, 'THREADS', 0)
    with pytest.raises(ValueError):
        Config.validate()


def test_oracle_gauge_is_validated(minimal_config_dict):
    data = copy.deepcopy(minimal_config_dict)
    data['oracle'] = {'gauge': 'simpson'}
    assert RunConfig.from_dict(data).oracle.gauge == 'simpson'
    assert RunConfig.from_dict(minimal_config_dict).oracle.gauge == 'midpoint'

    data['oracle'] = {'gauge': 'trapezoid'}
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert any(v.startswith('oracle.gauge') for v in info.value.violations)
