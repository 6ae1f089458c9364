import math

from src.artifacts import (build_meta, fstar_from_records, fstar_to_records, read_csv_rows, read_meta,
                           write_csv, write_json)
from src.jetcalc import REAL, GradeBound, Jet


def test_csv_is_byte_identical(tmp_path):
    meta = build_meta('abc123', 7, {'config_name': 'demo'})
    rows = [[1, 0.1, True], [2, math.nan, False]]
    a = write_csv(tmp_path / 'a.csv', ['j', 'value', 'ok'], rows, meta)
    b = write_csv(tmp_path / 'b.csv', ['j', 'value', 'ok'], rows, meta)
    assert a.read_bytes() == b.read_bytes()


def test_csv_metadata_and_rows(tmp_path):
    meta = build_meta('abc123', 7)
    path = write_csv(tmp_path / 'out.csv', ['j', 'value'], [[1, 0.5], [2, math.inf]], meta)
    assert read_meta(path) == {'config_hash': 'abc123', 'seed': '7', 'tool_version': meta['tool_version']}
    rows = read_csv_rows(path)
    assert rows[0] == {'j': '1', 'value': '5.000000000000e-01'}
    assert rows[1]['value'] == 'inf'


def test_json_document_carries_meta(tmp_path):
    meta = build_meta(None)
    path = write_json(tmp_path / 'doc.json', {'value': 1.0 / 3, 'z': 1 + 2j, 'missing': math.nan}, meta)
    text = path.read_text()
    assert '"config_hash": "none"' in text
    assert '"missing": "nan"' in text
    assert '"re": 1.0' in text


def test_fstar_records_round_trip():
    coeff = Jet.monomial((1, 0), (), (), 0, 0.25, GradeBound(0, 2, 2), REAL)
    table = {(0, (1,)): coeff, (1, (0,)): coeff.scale(2)}
    restored = fstar_from_records(fstar_to_records(table))
    assert set(restored) == set(table)
    assert restored[(1, (0,))] == table[(1, (0,))]
