#!/usr/bin/env python3
"""
Results Dashboard - summary of one run directory

Usage: python3 tools/results_dashboard.py [OUTPUT_DIR] [--preset=NAME]

Reads whatever artifacts the CLI left in the directory and prints:
- Well data and assumption checks (well.json)
- Expansion coefficients per eigenvalue (prediction.csv)
- Oracle against prediction, gaps and the fitted c0 offset (compare.csv, gaps.csv, compare.json)
- Weyl counts (weyl.csv)
- Landau reference check (landau_check.csv)

Missing files are skipped, so the dashboard works after any subset of commands.
"""

import argparse
import json
import os
import sys
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv
load_dotenv()

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.artifacts import read_csv_rows, read_meta  # noqa: E402


def _load_rows(run_dir: Path, name: str) -> Optional[List[Dict[str, str]]]:
    path = run_dir / name
    if not path.exists():
        return None
    return read_csv_rows(path)


def _load_json(run_dir: Path, name: str) -> Optional[Dict]:
    path = run_dir / name
    if not path.exists():
        return None
    with open(path, 'r') as f:
        return json.load(f)


def _header(title: str):
    print("\n" + "=" * 70)
    print(f"  {title}")
    print("=" * 70)


def print_well(run_dir: Path):
    data = _load_json(run_dir, 'well.json')
    if data is None:
        return
    well = data['well']
    _header("WELL")
    print(f"  q0:      {well.get('q0')}")
    print(f"  b0:      {well.get('b0')}")
    print(f"  beta:    {well.get('beta')}")
    print(f"  r0:      {well.get('r0')}")
    print("\n  Assumptions:")
    for name, entry in data['assumptions'].items():
        if isinstance(entry, dict) and 'passed' in entry:
            print(f"    {'✅' if entry['passed'] else '❌'} {name}")


def print_prediction(run_dir: Path):
    rows = _load_rows(run_dir, 'prediction.csv')
    if rows is None:
        return
    _header("EIGENVALUE EXPANSION  lambda_j = sum_k c_jk hbar^(k/2)")
    by_level = defaultdict(dict)
    for row in rows:
        by_level[int(row['j'])][int(row['k'])] = float(row['coefficient'])
    powers = sorted({k for coeffs in by_level.values() for k in coeffs})
    print("  " + "j".ljust(4) + "".join(f"k={k}".rjust(16) for k in powers))
    for j in sorted(by_level):
        print("  " + str(j).ljust(4) + "".join(f"{by_level[j].get(k, 0.0):16.8g}" for k in powers))


def print_comparison(run_dir: Path):
    rows = _load_rows(run_dir, 'compare.csv')
    if rows is None:
        return
    summary = _load_json(run_dir, 'compare.json') or {}
    _header("EXPANSION vs ORACLE")
    print(f"  c0 offset:          {summary.get('c0_offset')}")
    print(f"  residual exponent:  {summary.get('residual_exponent')}")
    if summary.get('fit_note'):
        print(f"  ⚠️  {summary['fit_note']}")
    print(f"\n  {'hbar':>8} {'j':>3} {'oracle':>16} {'predicted':>16} {'residual/hbar^2':>16}")
    for row in rows:
        hbar = float(row['hbar'])
        scaled = float(row['residual']) / hbar ** 2
        print(f"  {hbar:8.4g} {row['j']:>3} {float(row['oracle']):16.10g} "
              f"{float(row['predicted']):16.10g} {scaled:16.4e}")

    gaps = _load_rows(run_dir, 'gaps.csv')
    if gaps:
        print("\n  Gap (lambda_2 - lambda_1) / hbar^2:")
        for row in gaps:
            oracle, predicted = float(row['oracle_gap']), float(row['predicted_gap'])
            error = abs(oracle - predicted) / abs(predicted) if predicted else float('nan')
            print(f"    hbar={float(row['hbar']):<8.4g} oracle={oracle:.6f} predicted={predicted:.6f} "
                  f"({error:.1%})")


def print_weyl(run_dir: Path):
    rows = _load_rows(run_dir, 'weyl.csv')
    if rows is None:
        return
    _header("WEYL COUNT")
    for row in rows:
        line = f"  b1={row['b1']}  hbar={float(row['hbar']):.4g}  predicted={float(row['predicted']):.3f}"
        if row.get('oracle'):
            line += f"  oracle={row['oracle']} [{row['oracle_low']}, {row['oracle_high']}]"
            line += f"  diff={float(row['relative_difference']):+.1%}"
        print(line)


def print_landau(run_dir: Path):
    rows = _load_rows(run_dir, 'landau_check.csv')
    if rows is None:
        return
    _header("LANDAU REFERENCE")
    passed = sum(row['passed'] == 'true' for row in rows)
    worst = max(float(row['relative_error']) for row in rows)
    print(f"  {passed}/{len(rows)} eigenvalues on a Landau level (worst relative error {worst:.2e})")


def main():
    parser = argparse.ArgumentParser(description='Summarize a run directory')
    parser.add_argument('run_dir', nargs='?', help='Directory written by the CLI')
    parser.add_argument('--preset', help='Use OUTPUT_DIR/<preset> as the run directory')
    args = parser.parse_args()

    if args.run_dir:
        run_dir = Path(args.run_dir)
    elif args.preset:
        run_dir = Path(os.getenv('OUTPUT_DIR', 'output')) / args.preset
    else:
        parser.error('give a run directory or --preset')
    if not run_dir.is_dir():
        print(f"❌ No such run directory: {run_dir}")
        return 1

    meta_source = next((p for p in sorted(run_dir.glob('*.csv'))), None)
    meta = read_meta(meta_source) if meta_source else {}
    print(f"\n📊 {run_dir}  config_hash={meta.get('config_hash', '?')[:12]}  "
          f"version={meta.get('tool_version', '?')}")

    print_well(run_dir)
    print_prediction(run_dir)
    print_comparison(run_dir)
    print_weyl(run_dir)
    print_landau(run_dir)
    print()
    return 0


if __name__ == '__main__':
    sys.exit(main())
