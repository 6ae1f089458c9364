#!/usr/bin/env python3
"""
Chart and truncation study for one configuration

Usage: python3 tools/convergence_study.py --preset=quadratic-well-2d [--rotations=0,0.5,1.2]
                                          [--methods=lstsq,homotopy] [--out=DIR]

For every (Darboux method, frame rotation) variant the full pipeline is rerun
and the expansion coefficients are tabulated. b0, the harmonic energies and
the gaps must agree across variants; c0 is reported as-is since only its
fitted-offset combination is chart independent.

Writes chart_study.csv (variant, j, k, coefficient) to the output directory.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from dotenv import load_dotenv
load_dotenv()

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.artifacts import build_meta, write_csv  # noqa: E402
from src.config import RunConfig  # noqa: E402
from src.errors import BirkhoffError  # noqa: E402
from src.logger import setup_logging  # noqa: E402
from src.pipeline import NormalFormPipeline  # noqa: E402


def _variants(config: RunConfig, methods, rotations):
    pairs = config.system.dimension // 2
    for method in methods:
        for angle in rotations:
            rotation = None if angle == 0.0 else (angle,) * pairs
            truncation = replace(config.truncation, darboux_method=method, frame_rotation=rotation)
            yield f"{method}@{angle:g}", replace(config, truncation=truncation)


def main():
    parser = argparse.ArgumentParser(description='Chart-independence study of the eigenvalue expansion')
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--config')
    source.add_argument('--preset')
    parser.add_argument('--methods', default='lstsq,homotopy')
    parser.add_argument('--rotations', default='0,0.7')
    parser.add_argument('--out', help='Output directory (default: OUTPUT_DIR/<name>)')
    parser.add_argument('--log-level', default='WARNING')
    args = parser.parse_args()
    setup_logging(args.log_level)

    try:
        config = RunConfig.from_file(args.config) if args.config else RunConfig.from_preset(args.preset)
    except BirkhoffError as e:
        print(f"❌ {e.message}")
        return e.exit_code
    methods = [m.strip() for m in args.methods.split(',') if m.strip()]
    rotations = [float(a) for a in args.rotations.split(',') if a.strip()]

    print("\n" + "=" * 70)
    print(f"  CHART STUDY: {config.name}")
    print("=" * 70)

    rows = []
    reference = None
    for label, variant in _variants(config, methods, rotations):
        try:
            prediction = NormalFormPipeline(variant).prediction
        except BirkhoffError as e:
            print(f"  {label:18} ❌ {type(e).__name__}: {e.message}")
            continue
        for j, k, c in prediction.rows():
            rows.append([label, j, k, c])
        if reference is None:
            reference = prediction
        drift_b0 = abs(prediction.b0 - reference.b0)
        drift_gap = (abs(prediction.gap(0) - reference.gap(0))
                     if prediction.n_levels > 1 and reference.n_levels > 1 else 0.0)
        print(f"  {label:18} b0={prediction.b0:.12g}  c0={prediction.c0:+.8g}  "
              f"E={[round(E, 8) for E in prediction.energies]}  "
              f"drift(b0)={drift_b0:.1e}  drift(gap)={drift_gap:.1e}")

    out = config.resolve_output_dir(args.out)
    meta = build_meta(config.config_hash(), config.oracle.seed, {'config_name': config.name})
    write_csv(out / 'chart_study.csv', ['variant', 'j', 'k', 'coefficient'], rows, meta)
    print(f"\n  Table written to {out / 'chart_study.csv'}\n")
    return 0


if __name__ == '__main__':
    sys.exit(main())
