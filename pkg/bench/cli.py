"""
Command-line entry point.

    python main.py validate-conjugate --out runs/conj
    python main.py ppd --set experiment=conjugate-normal --set n=20 --engines ssla,assla
    python main.py cancellation --precision single --set n=1000,10000

Exit status: 0 ok, 2 configuration, 3 numeric, 4 data, 1 anything else.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from marshmallow import ValidationError

from config import Config
from ppd.curvature import build_curvature
from ppd.oracles import analytic_grid
from ppd.predictive import grid_moments

from .error_handlers import EXIT_OK, ErrorDispatcher, register_error_handlers
from .experiments import (
    CURVATURE_LABELS,
    ExperimentRunner,
    build_problem,
    engine_grid,
    fit_problem,
    resolve_curvature,
)
from .reports import ReportWriter, atomic_write_text, to_json
from .seeding import derive_int
from .settings import config_hash, dump_config, load_experiment_config

logger = logging.getLogger(__name__)

# subcommand -> experiments it accepts, the first being the default
SUBCOMMANDS = {
    'fit': ('conjugate-normal', 'conjugate-poisson', 'prior-modularity', 'hetero-toy'),
    'ppd': ('conjugate-normal', 'conjugate-poisson', 'prior-modularity', 'hetero-toy'),
    'validate-conjugate': ('conjugate-normal', 'conjugate-poisson'),
    'hetero-bench': ('hetero-toy',),
    'cancellation': ('cancellation',),
    'prior-modularity': ('prior-modularity',),
    'csv-bench': ('csv-regression',),
}


@dataclass
class CliInvocation:
    subcommand: str
    config_path: Optional[str] = None
    overrides: List[str] = field(default_factory=list)
    output_dir: Optional[str] = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ppd-laplace',
                                     description='Self-supervised Laplace predictive engines and benchmarks')
    sub = parser.add_subparsers(dest='subcommand', required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument('--config', help='key = value settings file')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', dest='overrides',
                       help='override a setting (repeatable, applied in order)')
        p.add_argument('--out', help='output directory')
        p.add_argument('--seed', type=int)
        p.add_argument('--precision', choices=('single', 'double'))
        p.add_argument('--engines', help='comma-separated subset of ssla,assla,la-mc,plugin')
        p.add_argument('--curvature', choices=('dense', 'diag', 'blocked'))
        p.add_argument('--threads', type=int, help='worker cap (overrides PPD_LAPLACE_THREADS)')
        p.add_argument('--log-level', default=None)
    return parser


def invocation_from_args(args: argparse.Namespace) -> CliInvocation:
    overrides = list(args.overrides)
    for flag in ('seed', 'precision', 'engines', 'curvature', 'threads'):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{flag}={value}")
    out = args.out or os.path.join(Config.OUTPUT_DIR, args.subcommand)
    return CliInvocation(args.subcommand, args.config, overrides, out)


def resolve_config(invocation: CliInvocation):
    accepted = SUBCOMMANDS[invocation.subcommand]
    config = load_experiment_config(invocation.config_path, invocation.overrides,
                                    base={'experiment': accepted[0]})
    if config.experiment not in accepted:
        raise ValidationError({'experiment': [f"'{invocation.subcommand}' runs one of {list(accepted)}, "
                                              f"not '{config.experiment}'."]})
    return config


def dispatch(invocation: CliInvocation, dispatcher: Optional[ErrorDispatcher] = None) -> int:
    """Run one subcommand; on failure write error.json and return its exit status."""
    if dispatcher is None:
        dispatcher = ErrorDispatcher()
        register_error_handlers(dispatcher)
    out = invocation.output_dir or os.path.join(Config.OUTPUT_DIR, invocation.subcommand)
    try:
        config = resolve_config(invocation)
        writer = ReportWriter(out, config.experiment, config_hash(config))
        if invocation.subcommand in ('fit', 'ppd'):
            writer.write_resolved_config(dump_config(config))
            run_single(invocation.subcommand, config, writer)
        else:
            ExperimentRunner(config, writer, resolved=dump_config(config)).run()
        return EXIT_OK
    except Exception as e:
        status, record = dispatcher.handle(e)
        record['subcommand'] = invocation.subcommand
        record['exit_status'] = status
        if status == 1:
            logger.error(f"[{invocation.subcommand}] failed: {e}", exc_info=True)
        else:
            logger.error(f"[{invocation.subcommand}] failed: {e}")
        try:
            atomic_write_text(os.path.join(out, 'error.json'), to_json(record))
        except OSError as write_error:
            logger.warning(f"Could not write error record to {out}: {write_error}")
        print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)
        return status


def run_single(subcommand: str, config, writer: ReportWriter):
    """``fit`` writes fit.json; ``ppd`` also writes one normalized grid per engine."""
    n, seed_index = config.n[0], 0
    problem = build_problem(config, n, seed_index)
    problem.model = problem.model.with_precision(config.precision)
    fit = fit_problem(problem, config, seed=derive_int(config.seed, 'fit', n, seed_index))
    writer.write_json('fit.json', {
        'experiment': config.experiment,
        'n': n,
        'model': problem.model.describe(),
        'prior': repr(problem.prior),
        **fit.to_dict(),
    })
    writer.record(kind='fit', n=n, converged=fit.converged, stationary=fit.stationary,
                  iterations=fit.iterations)
    if subcommand == 'fit':
        writer.close()
        return

    kind = resolve_curvature(config.curvature, problem.model)
    curv = build_curvature(kind, problem.model, problem.prior, problem.data, fit.theta)
    summary = {}
    grids = {}
    for engine in config.engines:
        grids[engine] = engine_grid(engine, problem, fit, config, problem.x_test, kind, curv,
                                    mc_seed=derive_int(config.seed, 'la-mc', n, seed_index),
                                    threads=config.threads, require_converged=False)
    if problem.oracle is not None:
        any_grid = next(iter(grids.values()))
        grids['analytic'] = analytic_grid(problem.oracle, problem.data, any_grid.y_values)
    for engine, grid in grids.items():
        writer.write_grid(grid, engine, n, config.seed)
        mean, sd = grid_moments(grid)
        summary[engine] = {'mass': grid.integrate(grid.density), 'mean': mean, 'sd': sd,
                           'failed_points': list(grid.failed_points)}
    writer.write_json('ppd.json', {'x_test': problem.x_test.tolist(), 'curvature': CURVATURE_LABELS[kind],
                                   'engines': summary})
    writer.record(kind='ppd', engines=sorted(grids))
    writer.close()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or Config.LOG_LEVEL).upper(),
        format=Config.LOG_FORMAT,
    )
    return dispatch(invocation_from_args(args))


if __name__ == '__main__':
    sys.exit(main())
