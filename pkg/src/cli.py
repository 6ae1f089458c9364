#!/usr/bin/env python3
"""
Command-line entry point

Usage: python -m src.cli <command> [--config PATH | --preset NAME] [--out DIR]
                         [--dump-jets] [--dump-matrix] [--threads N] [--log-level L]

Commands:
  analyze      well location, frequencies, resonance order, assumption report
  reduce       classical reduction: H_hat jet and invariant residuals
  normal-form  Birkhoff normal form (resonant coefficient table)
  predict      eigenvalue expansion coefficients
  oracle       finite-difference eigenvalues over the configured hbar values
  compare      oracle against prediction (fitted c0 offset, residual exponent)
  weyl         predicted against oracle eigenvalue counts below b1*hbar
  list-presets bundled configurations

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 assumption failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from .artifacts import build_meta, fstar_to_records, jet_to_records, write_csv, write_json
from .config import RunConfig, list_presets
from .errors import BirkhoffError, ConfigError
from .logger import setup_logging
from .numerical_oracle import build_operator, export_matrix
from .pipeline import NormalFormPipeline

logger = logging.getLogger(__name__)

COMMANDS = ('analyze', 'reduce', 'normal-form', 'predict', 'oracle', 'compare', 'weyl', 'list-presets')


class CommandContext:
    """Pipeline plus the output directory and metadata shared by every artifact."""

    def __init__(self, config: RunConfig, out: Path, threads: Optional[int] = None,
                 dump_jets: bool = False, dump_matrix: bool = False):
        self.config = config
        self.out = out
        self.dump_jets = dump_jets
        self.dump_matrix = dump_matrix
        self.pipeline = NormalFormPipeline(config, threads)
        self.meta = build_meta(config.config_hash(), config.oracle.seed, {'config_name': config.name})

    def path(self, name: str) -> Path:
        return self.out / name


def _banner(title: str):
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)


def _section(title: str):
    print(f"\n{'─' * 35}")
    print(title)
    print(f"{'─' * 35}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_analyze(ctx: CommandContext) -> Dict[str, Any]:
    p = ctx.pipeline
    well = p.well
    report = p.assumptions
    write_json(ctx.path('well.json'), {'well': well.to_dict(), 'assumptions': report}, ctx.meta)

    _banner(f"WELL ANALYSIS: {ctx.config.name} (d={p.system.dimension})")
    print(f"  q0:               {[round(float(x), 10) for x in well.q0]}")
    print(f"  b0:               {well.b0:.12g}")
    print(f"  beta(q0):         {[round(b, 10) for b in well.beta]}")
    print(f"  resonance order:  {well.r0 if well.r0_finite else 'inf'}"
          + (f"  (vector {list(well.resonance_vector)})" if well.resonance_vector else ''))
    _section("ASSUMPTIONS")
    for name, entry in report.items():
        if isinstance(entry, dict) and 'passed' in entry:
            print(f"  {name:22} {'ok' if entry['passed'] else 'FAILED'}")
    print()

    if not report['passed']:
        p.require_assumptions()
    return report


def cmd_reduce(ctx: CommandContext):
    reduction = ctx.pipeline.reduction
    payload = {
        'total_order': reduction.total_order,
        'bound': {'phase': reduction.hamiltonian.bound.max_phase_degree,
                  'w': reduction.hamiltonian.bound.max_w_degree,
                  'total': reduction.hamiltonian.bound.max_total_degree},
        'darboux_method': reduction.chart.method,
        'residuals': reduction.residuals,
        'hamiltonian': jet_to_records(reduction.hamiltonian.jet),
        'beta_hat': [jet_to_records(b) for b in reduction.beta_hat],
    }
    write_json(ctx.path('reduction.json'), payload, ctx.meta)
    if ctx.dump_jets:
        maps = {'psi': [jet_to_records(c) for c in reduction.chart.psi.components],
                'phi': [jet_to_records(c) for c in reduction.chart.phi.components]}
        write_json(ctx.path('chart.json'), maps, ctx.meta)
    logger.info(f"Reduction residuals: {', '.join(f'{k}={v:.2e}' for k, v in reduction.residuals.items())}")
    return reduction


def cmd_normal_form(ctx: CommandContext):
    nf = ctx.pipeline.normal_form
    payload = {'r': nf.r, 'residual': nf.residual, 'stages': nf.stages, 'fstar': fstar_to_records(nf.fstar)}
    if ctx.dump_jets:
        payload.update({'tau': jet_to_records(nf.tau), 'kappa': jet_to_records(nf.kappa),
                        'rho': jet_to_records(nf.rho)})
    write_json(ctx.path('normal_form.json'), payload, ctx.meta)
    return nf


def cmd_predict(ctx: CommandContext):
    prediction = ctx.pipeline.prediction
    write_csv(ctx.path('prediction.csv'), ['j', 'k', 'coefficient'], prediction.rows(), ctx.meta)
    write_json(ctx.path('prediction.json'), prediction.to_dict(), ctx.meta)

    _banner(f"EIGENVALUE EXPANSION: {ctx.config.name}")
    print(f"  b0 = {prediction.b0:.12g}   nu = {[round(v, 10) for v in prediction.nu]}   c0 = {prediction.c0:.8g}")
    for j, coeffs in enumerate(prediction.coefficients):
        terms = '  '.join(f"h^{k / 2:g}: {c:+.8g}" for k, c in sorted(coeffs.items()) if c != 0.0)
        print(f"  lambda_{j + 1}  {terms}")
    print()
    return prediction


def cmd_oracle(ctx: CommandContext):
    p = ctx.pipeline
    spectra = p.spectra
    rows = [row for spectrum in spectra for row in spectrum.rows()]
    write_csv(ctx.path('oracle.csv'), ['hbar', 'points', 'half_width', 'j', 'lambda', 'residual'], rows, ctx.meta)
    if ctx.dump_matrix:
        for spectrum in spectra:
            spec = p.discretization(spectrum.spec.hbar)
            export_matrix(build_operator(p.system, spec), ctx.path(f"matrix_hbar{spec.hbar:g}.txt"))
    if ctx.config.oracle.reference == 'landau':
        check = p.landau_check()
        write_csv(ctx.path('landau_check.csv'), ['hbar', 'j', 'lambda', 'landau', 'relative_error', 'passed'],
                  [[r['hbar'], r['j'], r['lambda'], r['landau'], r['relative_error'], r['passed']] for r in check],
                  ctx.meta)
        passed = sum(r['passed'] for r in check)
        print(f"\nLandau check: {passed}/{len(check)} eigenvalues within 1e-2 of hbar(2k+1)\n")
    return spectra


def cmd_compare(ctx: CommandContext):
    report = ctx.pipeline.compare()
    header = ['hbar', 'j', 'oracle', 'predicted', 'residual', 'residual_exponent']
    write_csv(ctx.path('compare.csv'), header, [[r[h] for h in header] for r in report.rows], ctx.meta)

    long_rows = []
    for r in report.rows:
        for series in ('oracle', 'predicted', 'residual'):
            long_rows.append([r['hbar'], r['j'], series, r[series]])
    write_csv(ctx.path('compare_long.csv'), ['hbar', 'j', 'series', 'value'], long_rows, ctx.meta)
    if report.gaps:
        write_csv(ctx.path('gaps.csv'), ['hbar', 'oracle_gap', 'predicted_gap'],
                  [[g['hbar'], g['oracle_gap'], g['predicted_gap']] for g in report.gaps], ctx.meta)
    write_json(ctx.path('compare.json'), {'c0_offset': report.offset, 'residual_exponent': report.residual_exponent,
                                          'fit_note': report.fit_note,
                                          'prediction': report.prediction.to_dict()}, ctx.meta)

    _banner(f"EXPANSION vs ORACLE: {ctx.config.name}")
    print(f"  fitted c0 offset:   {report.offset:.8g}")
    print(f"  residual exponent:  {report.residual_exponent:.3f}")
    for g in report.gaps:
        print(f"  hbar={g['hbar']:<8g} gap/hbar^2 oracle={g['oracle_gap']:.6f} predicted={g['predicted_gap']:.6f}")
    print()
    return report


def cmd_weyl(ctx: CommandContext):
    report = ctx.pipeline.weyl()
    header = ['b1', 'hbar', 'predicted', 'oracle', 'oracle_low', 'oracle_high', 'relative_difference']
    write_csv(ctx.path('weyl.csv'), header, [[r.get(h, '') for h in header] for r in report.rows], ctx.meta)
    band_rows = [[list(b['n']), b['integral'], b['volume_form_integral'], b['cells']] for b in report.weyl.bands]
    write_csv(ctx.path('weyl_bands.csv'), ['n', 'integral', 'volume_form_integral', 'cells'], band_rows, ctx.meta)

    _banner(f"WEYL COUNT: {ctx.config.name} (b1={report.weyl.b1:g})")
    print(f"  band integral:      {report.weyl.integral:.10g}")
    print(f"  integrand mismatch: {report.weyl.integrand_difference:.2e}")
    for r in report.rows:
        line = f"  hbar={r['hbar']:<8g} predicted={r['predicted']:.4f}"
        if 'oracle' in r:
            line += f"  oracle={r['oracle']}"
        print(line)
    print()
    return report


HANDLERS = {
    'analyze': cmd_analyze,
    'reduce': cmd_reduce,
    'normal-form': cmd_normal_form,
    'predict': cmd_predict,
    'oracle': cmd_oracle,
    'compare': cmd_compare,
    'weyl': cmd_weyl,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='birkhoff', description='Semiclassical Birkhoff normal forms '
                                     'for magnetic Schrödinger operators')
    parser.add_argument('command', choices=COMMANDS)
    source = parser.add_mutually_exclusive_group()
    source.add_argument('--config', '-c', help='Run configuration (JSON)')
    source.add_argument('--preset', '-p', help='Bundled preset name (see list-presets)')
    parser.add_argument('--out', '-o', help='Output directory (default: OUTPUT_DIR/<name>)')
    parser.add_argument('--dump-jets', action='store_true', help='Also write intermediate jets')
    parser.add_argument('--dump-matrix', action='store_true', help='Write oracle matrices as coordinate triplets')
    parser.add_argument('--threads', type=int, default=None, help='Worker pool size for sweeps')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING, ...')
    return parser


def load_config(args) -> RunConfig:
    if args.config:
        return RunConfig.from_file(args.config)
    if args.preset:
        return RunConfig.from_preset(args.preset)
    raise ConfigError(['--config or --preset is required'])


def report_error(error: BirkhoffError, out: Optional[Path]):
    document = json.dumps(error.to_dict(), indent=2, sort_keys=True, default=str)
    print(document, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / 'error.json').write_text(document + '\n')
        except OSError as e:
            logger.warning(f"Could not write error.json: {e}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    if args.command == 'list-presets':
        for name in list_presets():
            print(name)
        return 0

    out = Path(args.out) if args.out else None
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError([f'--threads: must be >= 1, got {args.threads}'])
        config = load_config(args)
        out = config.resolve_output_dir(args.out)
        try:
            ctx = CommandContext(config, out, args.threads, args.dump_jets, args.dump_matrix)
        except ValueError as e:
            if isinstance(e, BirkhoffError):
                raise
            raise ConfigError([f"environment: {e}"])
        logger.info(f"Running '{args.command}' for {config.name} -> {out}")
        HANDLERS[args.command](ctx)
    except BirkhoffError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        report_error(e, out)
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        report_error(BirkhoffError(str(e), {'type': type(e).__name__}), out)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
