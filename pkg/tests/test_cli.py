import json

import pytest

from src.cli import main


def test_list_presets(capsys):
    assert main(['list-presets']) == 0
    assert 'quadratic-well-2d' in capsys.readouterr().out.split()


def test_bad_config_exit_code(tmp_path, minimal_config_dict):
    data = dict(minimal_config_dict)
    data['system'] = dict(data['system'], dimension=3)
    config = tmp_path / 'bad.json'
    config.write_text(json.dumps(data))
    out = tmp_path / 'out'
    assert main(['analyze', '--config', str(config), '--out', str(out)]) == 2
    error = json.loads((out / 'error.json').read_text())
    assert error['error'] == 'ConfigError'
    assert error['exit_code'] == 2


def test_missing_source_is_config_error(tmp_path):
    assert main(['predict', '--out', str(tmp_path)]) == 2


def test_constant_field_fails_assumptions(tmp_path):
    assert main(['analyze', '--preset', 'landau', '--out', str(tmp_path)]) == 4
    assert (tmp_path / 'well.json').exists()
    error = json.loads((tmp_path / 'error.json').read_text())
    assert error['error'] == 'AssumptionError'


def test_analyze_is_deterministic(tmp_path):
    first, second = tmp_path / 'a', tmp_path / 'b'
    assert main(['analyze', '--preset', 'quadratic-well-2d', '--out', str(first)]) == 0
    assert main(['analyze', '--preset', 'quadratic-well-2d', '--out', str(second)]) == 0
    assert (first / 'well.json').read_bytes() == (second / 'well.json').read_bytes()
    document = json.loads((first / 'well.json').read_text())
    assert document['assumptions']['passed'] is True
    assert document['meta']['config_name'] == 'quadratic-well-2d'


@pytest.mark.slow
def test_resonant_preset_reports_vector(tmp_path):
    assert main(['normal-form', '--preset', 'resonant-4d', '--out', str(tmp_path)]) == 3
    error = json.loads((tmp_path / 'error.json').read_text())
    assert error['error'] == 'ResonanceError'
    assert error['details']['vector'] == [2, -1]


@pytest.mark.slow
def test_predict_writes_artifacts(tmp_path):
    assert main(['predict', '--preset', 'quadratic-well-2d', '--out', str(tmp_path)]) == 0
    lines = [line for line in (tmp_path / 'prediction.csv').read_text().splitlines() if not line.startswith('#')]
    assert lines[0] == 'j,k,coefficient'
    assert (tmp_path / 'prediction.json').exists()
