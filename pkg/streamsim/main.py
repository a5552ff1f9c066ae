# This program is in the public domain
"""
Command line interface.

Verbs::

    streamsim run SCENARIO            simulate a scenario file
    streamsim run --preset NAME       run an experiment preset to NAME.csv
    streamsim sweep                   GPU count x steps x strategy grid
    streamsim balance PROFILE -k 4    partition a measured block profile
    streamsim calibrate --model NAME  fit stage costs to frame rate anchors
    streamsim gen-fixtures            write reference kernel tensors

SCENARIO may be a file or the name of a shipped sample; relative names
are looked up in $STREAMSIM_DATA when not found.

The exit status is 0 on success, 1 when the run violated its SLO with a
late chunk or a late first frame, 2 for usage and scenario errors and 3
when the SLO or partition is infeasible.
"""

from __future__ import print_function

__all__ = ["cli", "main", "EXIT_OK", "EXIT_SLO", "EXIT_USAGE",
           "EXIT_INFEASIBLE"]

import argparse
import logging
import os
import sys

from . import __version__, costmodel, presets, support, tracefile
from .block_scheduler import (InfeasiblePartition, balance, load_profile,
                              uniform_partition)
from .calibrate import calibrate, save_fixture
from .pipeline_sim import sweep
from .ref_kernels import write_fixtures
from .scenario import SchemaError, load_scenario, run_scenario

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SLO = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3

_SEEDED = ('motion_trace', 'context_trace', 'stream_vae')


def _output(args, name):
    path = args.output_dir or "."
    if not os.path.isdir(path):
        os.makedirs(path)
    return os.path.join(path, name)


def _scenario_path(name):
    path = support.resolve(name)
    if not os.path.exists(path) and not os.path.isabs(path):
        candidate = os.path.join(support.get_data_path(), path)
        if os.path.exists(candidate):
            return candidate
    return path


def do_run(args):
    if args.preset:
        kw = {}
        if args.seed is not None and args.preset in _SEEDED:
            kw['seed'] = args.seed
        rows = presets.run_preset(args.preset, **kw)
        filename = _output(args, args.preset + ".csv")
        tracefile.write_rows(filename, rows)
        print("wrote %d rows to %s" % (len(rows), filename))
        return EXIT_OK
    if not args.scenario:
        raise SchemaError("run needs a scenario file or --preset")
    scenario = load_scenario(_scenario_path(args.scenario))
    if args.seed is not None:
        scenario.seed = args.seed
    if args.output_dir and not os.path.isdir(args.output_dir):
        os.makedirs(args.output_dir)
    report = run_scenario(scenario, output_dir=args.output_dir)
    row = report.to_row()
    print("%s: ttff %.4g s%s, %.4g fps, %d SLO violations"
          % (scenario.name, row['ttff'], " (late)" if report.ttff_violated else "",
             row['fps'], row['slo_violations']))
    if not report.feasible:
        return EXIT_INFEASIBLE
    if report.slo_violations or report.ttff_violated:
        return EXIT_SLO
    return EXIT_OK


def do_sweep(args):
    dev = presets.lookup_device(args.device)
    model = presets.lookup_model(args.model)
    shapes = dict((r, presets.stream_shape(r)) for r in args.resolution)
    rows = sweep(dev, model, shapes, gpus=args.gpus, steps=args.steps,
                 strategies=args.strategy, chunks=args.chunks,
                 workers=args.workers)
    filename = _output(args, args.output or "sweep.csv")
    tracefile.write_rows(filename, rows)
    print("wrote %d rows to %s" % (len(rows), filename))
    return EXIT_OK


def do_balance(args):
    profile = load_profile(_scenario_path(args.profile),
                           args.vae_encode, args.vae_decode)
    try:
        before = uniform_partition(profile, args.stages)
        after = balance(profile, args.stages)
    except InfeasiblePartition as exc:
        print("infeasible: %s" % exc, file=sys.stderr)
        return EXIT_INFEASIBLE
    rows = []
    for k in range(args.stages):
        rows.append({'device': k,
                     'blocks_before': before.sizes()[k],
                     'blocks_after': after.sizes()[k],
                     'time_before': before.stage_times[k],
                     'time_after': after.stage_times[k]})
    for name, part in (("uniform", before), ("balanced", after)):
        print("%-8s boundaries %s max %.6g s bubble %.3f"
              % (name, list(part.boundaries), part.max_time,
                 part.bubble_fraction()))
    if args.output:
        tracefile.write_rows(_output(args, args.output), rows)
    return EXIT_OK


def do_calibrate(args):
    model = presets.lookup_model(args.model)
    dev = presets.lookup_device(args.device)
    fitted, rows, chisq = calibrate(model, device=dev, steps=args.fit_steps)
    default = "%s-%s.txt" % (args.model, args.device.lower())
    filename = _output(args, args.output or default)
    save_fixture(filename, fitted, rows, chisq)
    for row in rows:
        print("%(resolution)s %(gpus)d gpus %(steps)d steps: anchor %(anchor).4g"
              " fitted %(fps).4g" % row)
    print("wrote %s" % filename)
    return EXIT_OK


def do_gen_fixtures(args):
    path = args.output_dir or "fixtures"
    if not os.path.isdir(path):
        os.makedirs(path)
    names = write_fixtures(path, seed=args.seed or 0)
    print("wrote %d tensors to %s" % (len(names), path))
    return EXIT_OK


def _parser():
    parser = argparse.ArgumentParser(
        prog="streamsim",
        description="Streaming video diffusion serving simulator")
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help="INFO logging, or DEBUG when repeated")
    common.add_argument('--seed', type=int, default=None,
                        help="override the random seed")
    common.add_argument('--output-dir', default=None,
                        help="directory for output files")
    verbs = parser.add_subparsers(dest='verb')
    verb = lambda name, text: verbs.add_parser(name, help=text, parents=[common])

    run = verb('run', "simulate a scenario or preset")
    run.add_argument('scenario', nargs='?', help="scenario file or sample name")
    run.add_argument('--preset', choices=sorted(presets.PRESETS),
                     help="experiment preset to run instead of a scenario")
    run.set_defaults(action=do_run)

    grid = verb('sweep', "simulate a configuration grid")
    grid.add_argument('--device', default='H100', choices=sorted(presets.DEVICES))
    grid.add_argument('--model', default='wan-1.3b', choices=sorted(presets.MODELS))
    grid.add_argument('--resolution', nargs='+', default=['480p', '512'],
                      choices=sorted(presets.RESOLUTIONS))
    grid.add_argument('--gpus', nargs='+', type=int, default=[1, 2, 3, 4])
    grid.add_argument('--steps', nargs='+', type=int, default=[1, 2, 3, 4])
    grid.add_argument('--strategy', nargs='+', default=[costmodel.PIPELINE_P2P],
                      choices=costmodel.STRATEGIES)
    grid.add_argument('--chunks', type=int, default=48)
    grid.add_argument('--workers', type=int, default=1)
    grid.add_argument('-o', '--output', default=None, help="CSV file name")
    grid.set_defaults(action=do_sweep)

    part = verb('balance', "partition a block profile")
    part.add_argument('profile', help="CSV with columns block, seconds")
    part.add_argument('-k', '--stages', type=int, default=4)
    part.add_argument('--vae-encode', type=float, default=0.,
                      help="encode seconds charged to the first stage")
    part.add_argument('--vae-decode', type=float, default=0.,
                      help="decode seconds charged to the last stage")
    part.add_argument('-o', '--output', default=None, help="CSV file name")
    part.set_defaults(action=do_balance)

    fit = verb('calibrate', "fit stage costs to anchors")
    fit.add_argument('--model', default='wan-1.3b', choices=sorted(presets.MODELS))
    fit.add_argument('--device', default='H100', choices=sorted(presets.DEVICES))
    fit.add_argument('--fit-steps', type=int, default=200)
    fit.add_argument('-o', '--output', default=None, help="fixture file name")
    fit.set_defaults(action=do_calibrate)

    gen = verb('gen-fixtures', "write reference tensors")
    gen.set_defaults(action=do_gen_fixtures)
    return parser


def main(argv=None):
    """Run the command line; returns the exit status."""
    parser = _parser()
    args = parser.parse_args(argv)
    verbose = min(getattr(args, 'verbose', 0), 2)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[verbose]
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.action(args)
    except (SchemaError, IOError) as exc:
        print("streamsim: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        log.debug("usage error", exc_info=True)
        print("streamsim: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


def cli():
    """Entry point for the ``streamsim`` console script."""
    sys.exit(main())


if __name__ == "__main__":
    cli()
