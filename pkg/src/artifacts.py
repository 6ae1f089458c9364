"""
Deterministic artifact writers

Every file carries the config hash and tool version. CSVs get '#' header
lines then a column header; floats use a fixed format so identical configs
give byte-identical outputs.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__

logger = logging.getLogger(__name__)

TOOL_VERSION = __version__
FLOAT_FORMAT = '%.12e'


def _format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return 'nan'
        if np.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return FLOAT_FORMAT % float(value)
    if isinstance(value, (list, tuple)):
        return ' '.join(_format_cell(v) for v in value)
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if np.isnan(value):
            return 'nan'
        if np.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return float(FLOAT_FORMAT % value)
    if isinstance(value, complex):
        return {'re': _jsonable(value.real), 'im': _jsonable(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def build_meta(config_hash: Optional[str], seed: Optional[int] = None,
               extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    meta: Dict[str, Any] = {'config_hash': config_hash or 'none', 'tool_version': TOOL_VERSION}
    if seed is not None:
        meta['seed'] = int(seed)
    if extra:
        meta.update(extra)
    return meta


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]],
              meta: Dict[str, Any]) -> Path:
    """Write rows in the given order with '#' metadata lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.StringIO()
    for key in sorted(meta):
        buffer.write(f"# {key}={meta[key]}\n")
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(list(header))
    count = 0
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
        count += 1
    with open(path, 'w', newline='') as f:
        f.write(buffer.getvalue())
    logger.info(f"Wrote {count} rows to {path}")
    return path


def write_json(path, payload: Dict[str, Any], meta: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = dict(_jsonable(payload))
    document['meta'] = _jsonable(meta)
    with open(path, 'w') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Wrote {path}")
    return path


def read_csv_rows(path) -> List[Dict[str, str]]:
    """Read a CSV written by ``write_csv`` (skips metadata lines)."""
    with open(path, 'r') as f:
        lines = [line for line in f if not line.startswith('#')]
    return list(csv.DictReader(lines))


def read_meta(path) -> Dict[str, str]:
    meta = {}
    with open(path, 'r') as f:
        for line in f:
            if not line.startswith('#'):
                break
            key, _, value = line[1:].strip().partition('=')
            meta[key] = value
    return meta


def jet_to_records(jet) -> Dict[str, Any]:
    """Jet JSON schema: {nw, nz, basis, bound, terms: [{w, alpha, gamma, l, re, im}]}."""
    return jet.to_dict()


def jet_from_records(data: Dict[str, Any]):
    from .jetcalc import Jet
    return Jet.from_dict(data)


def fstar_to_records(fstar) -> List[Dict[str, Any]]:
    """Resonant coefficient table as {l, m, coeffs} records sorted by (l, m)."""
    return [{'l': int(l), 'm': list(m), 'coeffs': jet_to_records(jet)}
            for (l, m), jet in sorted(fstar.items())]


def fstar_from_records(records: Sequence[Dict[str, Any]]):
    return {(int(r['l']), tuple(int(v) for v in r['m'])): jet_from_records(r['coeffs']) for r in records}
