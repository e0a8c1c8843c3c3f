"""
ctlo.cli
========

Command line front end: ``ctlo run``, ``ctlo simulate``, ``ctlo evaluate``
and ``ctlo check-jacobians``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence or a
failed numerical check.
"""

from __future__ import absolute_import, division, print_function

import argparse
import sys

import numpy as np

from . import __version__
from .utils import elapsed
from .io import PointFileError, read_points, read_tum, write_points, write_tum
from .pipeline import MODES, InitializationError, Odometry, OdometryConfig
from .evaluate import InsufficientOverlapError, compute_ate, compute_rte, write_xy
from .results import write_details
from .checks import check_jacobians
from .winwarning import WindowWarningMask
from . import simulator

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print("ERROR: {}".format(message))
        sys.stdout.flush()
        sys.exit(EXIT_USAGE)


def _parser():
    parser = ArgumentParser(prog='ctlo', description="Continuous-time LiDAR odometry.")
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    sub = parser.add_subparsers(dest='command', parser_class=ArgumentParser)

    run = sub.add_parser('run', help="estimate a trajectory from a point file")
    run.add_argument('--config', type=str, default=None, required=False,
                     help="key = value config file")
    run.add_argument('--preset', type=str, default=None, required=False,
                     help="config preset: indoor, outdoor or aggressive")
    run.add_argument('-i', '--input', type=str, required=True,
                     help="input point file (binary or .csv)")
    run.add_argument('-o', '--output', type=str, required=True,
                     help="output TUM trajectory")
    run.add_argument('--mode', type=str, default=None, choices=MODES,
                     help="continuous registration or deskewed scans")
    run.add_argument('-d', '--details', type=str, default=None, required=False,
                     help="output HDF5 file with status and diagnostics")
    run.add_argument('--status', type=str, default=None, required=False,
                     help="output CSV with one row per window")
    run.add_argument('--chunksize', type=int, default=65536,
                     help="point records read per block")
    run.add_argument('-v', '--verbose', default=False, action='store_true',
                     help="print per-window progress")

    sim = sub.add_parser('simulate', help="generate a synthetic point stream")
    sim.add_argument('--preset', type=str, required=True, choices=simulator.PRESETS,
                     help="simulation scenario")
    sim.add_argument('--seed', type=int, default=0, help="random seed")
    sim.add_argument('--duration', type=float, default=None,
                     help="seconds to simulate, preset default if not given")
    sim.add_argument('--out-points', type=str, required=True, help="output point file")
    sim.add_argument('--out-truth', type=str, required=True, help="output TUM ground truth")

    ev = sub.add_parser('evaluate', help="compare a trajectory with a reference")
    ev.add_argument('--est', type=str, required=True, help="estimated TUM trajectory")
    ev.add_argument('--ref', type=str, required=True, help="reference TUM trajectory")
    ev.add_argument('--rte', default=False, action='store_true',
                    help="also compute the relative translational error")
    ev.add_argument('--tolerance', type=float, default=None,
                    help="time association tolerance in seconds")
    ev.add_argument('--xy', type=str, default=None, required=False,
                    help="write aligned positions for plotting")

    chk = sub.add_parser('check-jacobians', help="finite-difference Jacobian checks")
    chk.add_argument('--trials', type=int, default=200, help="random configurations per factor")
    chk.add_argument('--seed', type=int, default=0, help="random seed")
    return parser


def _print_metrics(title, metrics):
    print("{}:".format(title))
    for key, value in metrics.items():
        print("  {:<10s} {:>14.6f}".format(key, value))
    for key, value in metrics.items():
        print("{}={:.9g}".format(key, value))
    sys.stdout.flush()


def run(args):
    start = elapsed(None, "")
    overrides = dict()
    if args.mode is not None:
        overrides['mode'] = args.mode
    if args.config is not None and args.preset is not None:
        print("ERROR: --preset cannot be combined with --config; set preset in the file")
        sys.stdout.flush()
        return EXIT_USAGE
    try:
        if args.config is not None:
            config = OdometryConfig.read(args.config, **overrides)
        elif args.preset is not None:
            config = OdometryConfig.preset(args.preset, **overrides)
        else:
            config = OdometryConfig(**overrides)
    except (IOError, ValueError) as err:
        print("ERROR: bad configuration: {}".format(err))
        sys.stdout.flush()
        return EXIT_USAGE

    odometry = Odometry(config, verbose=args.verbose)
    try:
        output = odometry.run(read_points(args.input, chunksize=args.chunksize))
    except (PointFileError, InitializationError) as err:
        print("ERROR: {}".format(err))
        sys.stdout.flush()
        return EXIT_DATA
    start = elapsed(start, "Odometry", verbose=args.verbose)

    output.write(args.output)
    if args.details is not None:
        write_details(args.details, output, config, clobber=True)
    if args.status is not None:
        output.status.write(args.status, format='ascii.csv', overwrite=True)
    elapsed(start, "Writing results", verbose=args.verbose)

    if odometry.dropped > 0:
        print("WARNING: {} points arrived after their window and were dropped".format(
            odometry.dropped))
    bad = output.bad_windows
    if np.any(bad):
        seen = int(np.bitwise_or.reduce(np.asarray(output.status['flags'])[bad]))
        print("WARNING: {} of {} windows are untrusted ({})".format(
            np.count_nonzero(bad), len(bad), ', '.join(WindowWarningMask.names(seen))))
    print("INFO: {} poses from {} windows written to {}".format(
        len(output), len(output.status), args.output))
    sys.stdout.flush()
    if output.diverged:
        print("ERROR: {} windows diverged".format(
            int(np.sum((np.asarray(output.status['flags']) & WindowWarningMask.DIVERGED) > 0))))
        sys.stdout.flush()
        return EXIT_DIVERGED
    return EXIT_OK


def simulate(args):
    sim, overrides = simulator.simulate_preset(args.preset, seed=args.seed,
                                               duration=args.duration)
    write_points(args.out_points, sim.points)
    write_tum(args.out_truth, sim.truth_table())
    print("INFO: {} points over {:.1f} s written to {}".format(
        len(sim.points), sim.duration, args.out_points))
    if overrides:
        print("INFO: suggested config: {}".format(', '.join(
            '{} = {}'.format(k, v) for k, v in sorted(overrides.items())
            if k != 'extrinsics')))
    sys.stdout.flush()
    return EXIT_OK


def evaluate(args):
    kwargs = dict()
    if args.tolerance is not None:
        kwargs['tolerance'] = args.tolerance
    try:
        est = read_tum(args.est)
        ref = read_tum(args.ref)
        _print_metrics("ATE [m]", compute_ate(est, ref, **kwargs))
        if args.rte:
            _print_metrics("RTE [%]", compute_rte(est, ref, **kwargs))
        if args.xy is not None:
            write_xy(args.xy, est, ref, **kwargs)
    except (IOError, InsufficientOverlapError, ValueError) as err:
        print("ERROR: {}".format(err))
        sys.stdout.flush()
        return EXIT_DATA
    return EXIT_OK


def check(args):
    table = check_jacobians(trials=args.trials, seed=args.seed)
    table['max_rel_error'].info.format = '.3e'
    table.pprint()
    sys.stdout.flush()
    if not np.all(table['passed']):
        print("ERROR: Jacobian check failed for {}".format(
            ', '.join(table['factor'][~np.asarray(table['passed'])])))
        sys.stdout.flush()
        return EXIT_DIVERGED
    return EXIT_OK


COMMANDS = {
    'run': run,
    'simulate': simulate,
    'evaluate': evaluate,
    'check-jacobians': check,
}


def main(options=None):
    """Entry point of the ``ctlo`` script.

    Args:
        options (list): optional list of commandline options to parse.

    Returns:
        int: the exit code.

    """
    parser = _parser()
    if options is None:
        args = parser.parse_args()
    else:
        args = parser.parse_args(options)

    if args.command is None:
        parser.print_help()
        print("ERROR: a command is required")
        sys.stdout.flush()
        return EXIT_USAGE

    return COMMANDS[args.command](args)
