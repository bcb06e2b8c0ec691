"""Meta-learning power control - command line interface.

The command line interface is a thin layer around the experiment engine. It
loads the configuration, applies the global options and maps every
subcommand to one engine method. Results are printed as YAML.

Subcommands:

gen-data : Generate a dataset of periods
train-joint : Joint learning on the pooled periods of a dataset
meta-train-fomaml : FOMAML meta-training on a dataset
meta-train-modular : Modular meta-training on a dataset
adapt : Adapt a checkpoint to one period of a dataset
eval : Mean test sum-rate of a checkpoint on one period of a dataset
experiment : Run a preset or a configured experiment
"""

from __future__ import annotations

import argparse
import logging
from logging.handlers import RotatingFileHandler
import os
import sys

import yaml

from metapower.config import load_config, override
from metapower.engine import ExperimentEngine
from metapower.errors import MetaPowerError
from metapower.experiment import PRESETS


logger = logging.getLogger(__name__)

# Format of all log messages
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


# ------------------------------------------------------------------------------
#
# Logging
#
# ------------------------------------------------------------------------------

def setup_logging(cfg, debug=False):
    """Log to stderr; if a log directory is configured also to a rotating
    log file in that directory."""
    root = logging.getLogger('metapower')
    if root.handlers:
        return
    formatter = logging.Formatter(LOG_FORMAT)
    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    root.addHandler(stream_handler)
    root.setLevel(logging.DEBUG if debug or cfg.debug else logging.INFO)
    if cfg.logdir is not None:
        if not os.access(cfg.logdir, os.F_OK):
            os.makedirs(cfg.logdir)
        file_handler = RotatingFileHandler(
            os.path.join(cfg.logdir, 'metapower.log'),
            maxBytes=1024 * 1024 * 100,
            backupCount=20
        )
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)


# ------------------------------------------------------------------------------
#
# Argument parsing
#
# ------------------------------------------------------------------------------

def get_parser():
    """Parser for the global options and all subcommands."""
    parser = argparse.ArgumentParser(
        prog='metapower',
        description='Meta-learning of graph neural network power control policies'
    )
    parser.add_argument('--config', help='Configuration file')
    parser.add_argument('--seed', type=int, help='Global random seed')
    parser.add_argument('--out-dir', dest='out_dir', help='Output directory')
    parser.add_argument('--threads', type=int, help='Number of worker threads')
    parser.add_argument('--debug', action='store_true', help='Debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('gen-data', help='Generate a dataset of periods')
    cmd.add_argument('--periods', type=int, help='Number of periods')
    cmd.add_argument('--name', default='dataset', help='Dataset name')

    for name, text in [
        ('train-joint', 'Joint learning on the pooled periods of a dataset'),
        ('meta-train-fomaml', 'FOMAML meta-training'),
        ('meta-train-modular', 'Modular meta-training')
    ]:
        cmd = commands.add_parser(name, help=text)
        cmd.add_argument('--data', required=True, help='Dataset file')
        if name == 'meta-train-modular':
            cmd.add_argument('--modules', type=int, help='Number of modules')

    cmd = commands.add_parser('adapt', help='Adapt a checkpoint to a new period')
    cmd.add_argument('--checkpoint', required=True, help='Checkpoint file')
    cmd.add_argument('--data', required=True, help='Dataset with the new period')
    cmd.add_argument('--period', type=int, default=0, help='Index of the period')
    cmd.add_argument('--budget', type=int, help='Number of training slots used')
    cmd.add_argument('--steps', type=int, help='Number of adaptation steps')

    cmd = commands.add_parser('eval', help='Evaluate a checkpoint on a period')
    cmd.add_argument('--checkpoint', required=True, help='Checkpoint file')
    cmd.add_argument('--data', required=True, help='Dataset with the period')
    cmd.add_argument('--period', type=int, default=0, help='Index of the period')
    cmd.add_argument('--assignment', help='Module assignment (module checkpoints)')

    cmd = commands.add_parser('experiment', help='Run an experiment')
    cmd.add_argument('--preset', choices=sorted(PRESETS.keys()), help='Preset experiment')
    cmd.add_argument(
        '--config', dest='experiment_config', help='Configuration of the experiment'
    )
    return parser


def get_engine(args):
    """Create the engine for the configuration and global options."""
    cfg = load_config(getattr(args, 'experiment_config', None) or args.config)
    properties = dict()
    if args.seed is not None:
        properties['experiment.seed'] = args.seed
    if args.out_dir is not None:
        properties['experiment.out_dir'] = args.out_dir
    if args.threads is not None:
        properties['experiment.threads'] = args.threads
    if properties:
        cfg = override(cfg, properties)
    return ExperimentEngine(cfg)


def dispatch(engine, args):
    """Call the engine method for the selected subcommand."""
    if args.command == 'gen-data':
        return engine.generate_data(n_periods=args.periods, name=args.name)
    elif args.command == 'train-joint':
        return engine.train_joint(args.data)
    elif args.command == 'meta-train-fomaml':
        return engine.meta_train_fomaml(args.data)
    elif args.command == 'meta-train-modular':
        return engine.meta_train_modular(args.data, modules=args.modules)
    elif args.command == 'adapt':
        return engine.adapt(
            args.checkpoint, args.data, period=args.period, budget=args.budget, steps=args.steps
        )
    elif args.command == 'eval':
        return engine.evaluate(
            args.checkpoint, args.data, period=args.period, assignment_file=args.assignment
        )
    return engine.run_experiment(name=args.preset)


def main(argv=None):
    """Run the command line interface. Returns the exit status: 0 on
    success, 1 for invalid input or configuration, 2 for any other error.
    """
    args = get_parser().parse_args(argv)
    try:
        engine = get_engine(args)
        setup_logging(engine.config, debug=args.debug)
        result = dispatch(engine, args)
    except MetaPowerError as ex:
        logger.error('%s', ex)
        print('error: ' + str(ex), file=sys.stderr)
        return 1
    except Exception as ex:
        logger.exception(ex)
        print('error: ' + str(ex), file=sys.stderr)
        return 2
    print(yaml.safe_dump(result, default_flow_style=False, sort_keys=False), end='')
    return 0
