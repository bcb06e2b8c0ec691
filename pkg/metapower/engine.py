"""Meta-learning power control engine.

The engine is a wrapper around the components that are necessary to
generate datasets, train REGNN policies with joint learning, FOMAML or
modular meta-learning, adapt them to new periods and run complete
experiments. All files are read from and written to the output directory
that is managed by a storage.PathFactory.

Engine methods return plain dictionaries that describe the result of an
operation (files written, objective values), so that front ends only need to
render them.
"""

from __future__ import annotations

from dataclasses import replace
import logging
import os

from metapower import storage
from metapower.errors import IndexOutOfRange, ParseError
from metapower.experiment import preset, run_experiment
from metapower.fomaml import (
    evaluate_params, joint_train, meta_train_fomaml, runtime_finetune
)
from metapower.modular import (
    hard_objective, meta_train_modular, runtime_adapt_modular
)
from metapower.netsim import RngStream, generate_meta_dataset


logger = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
#
# Experiment Engine
#
# ------------------------------------------------------------------------------

class ExperimentEngine(object):
    """Engine that manages datasets, checkpoints and experiments for one
    configuration.

    Attributes
    ----------
    config : config.ExperimentConfig
        Configuration of all operations
    paths : storage.PathFactory
        Factory for output file names
    rng : netsim.RngStream
        Root random stream (derived from the configured seed)
    """
    def __init__(self, config, out_dir=None):
        """Initialize the engine from a given configuration object.

        Parameters
        ----------
        config : config.ExperimentConfig
            Validated configuration
        out_dir : string, optional
            Output directory (overrides the configured directory)
        """
        self.config = config
        self.paths = storage.PathFactory(out_dir if out_dir is not None else config.out_dir)
        self.rng = RngStream(config.seed)

    def _load_periods(self, dataset_file):
        periods, _ = storage.read_dataset(dataset_file)
        if not periods:
            raise ParseError('dataset {} contains no periods'.format(dataset_file))
        return periods

    def _load_period(self, dataset_file, period):
        periods = self._load_periods(dataset_file)
        if not -len(periods) <= period < len(periods):
            raise IndexOutOfRange(
                'period {} not in dataset with {} periods'.format(period, len(periods))
            )
        return periods[period]

    def generate_data(self, n_periods=None, name='dataset'):
        """Generate a meta-training dataset and write it to file.

        Parameters
        ----------
        n_periods : int, optional
            Number of periods (defaults to the configured number)
        name : string, optional
            File name (without suffix) in the output directory

        Returns
        -------
        dict
        """
        if n_periods is None:
            n_periods = self.config.meta_periods
        periods = generate_meta_dataset(
            self.config.sim, n_periods, self.rng.child('data').child(name)
        )
        filename = self.paths.dataset_file(name)
        storage.write_dataset(filename, periods, sim=self.config.sim)
        logger.info('wrote %d periods to %s', n_periods, filename)
        return {'file': filename, 'periods': n_periods, 'links': [p.k for p in periods]}

    def train_joint(self, dataset_file):
        """Train a single policy on the pooled training slots of a dataset."""
        periods = self._load_periods(dataset_file)
        history = list()
        params = joint_train(
            periods,
            self.config.policy,
            self.config.meta,
            self.rng.child('init').child('joint'),
            history=history
        )
        filename = self.paths.params_file('joint')
        storage.write_params(filename, params, seed=self.config.seed)
        log_file = self.paths.training_log_file('joint')
        storage.write_joint_log(log_file, history)
        return {'file': filename, 'log': log_file}

    def meta_train_fomaml(self, dataset_file):
        """Meta-train a shared initialization with FOMAML."""
        periods = self._load_periods(dataset_file)
        history = list()
        params = meta_train_fomaml(
            periods,
            self.config.policy,
            self.config.meta,
            self.rng.child('init').child('fomaml'),
            history=history
        )
        filename = self.paths.params_file('fomaml')
        storage.write_params(filename, params, seed=self.config.seed)
        log_file = self.paths.training_log_file('fomaml')
        storage.write_training_log(log_file, history, timing=self.config.timing)
        return {'file': filename, 'log': log_file}

    def meta_train_modular(self, dataset_file, modules=None):
        """Meta-train a repository of modules.

        Parameters
        ----------
        dataset_file : string
            Meta-training dataset
        modules : int, optional
            Number of modules (defaults to the configured number)

        Returns
        -------
        dict
        """
        periods = self._load_periods(dataset_file)
        cfg = self.config.modular
        if modules is not None:
            cfg = replace(cfg, modules=modules)
        history = list()
        mods = meta_train_modular(
            periods,
            self.config.policy,
            cfg,
            self.rng.child('init').child('modular:' + str(cfg.modules)),
            history=history
        )
        filename = self.paths.params_file('modular')
        storage.write_modules(filename, mods, seed=self.config.seed)
        log_file = self.paths.training_log_file('modular')
        storage.write_training_log(log_file, history, timing=self.config.timing)
        return {'file': filename, 'log': log_file, 'modules': mods.size}

    def adapt(self, checkpoint_file, dataset_file, period=0, budget=None, steps=None):
        """Adapt a trained policy or module repository to one period using
        only the first `budget` training slots of that period.

        A REGNN checkpoint is fine-tuned and written as 'adapted.yaml'. For a
        module repository the module assignment is selected and written as
        'assignment.yaml' together with the adaptation log.

        Returns
        -------
        dict
        """
        runtime = self.config.runtime
        budget = runtime.budget if budget is None else budget
        steps = runtime.steps if steps is None else steps
        test_period = self._load_period(dataset_file, period)
        policy = self.config.policy
        kind = storage.document_format(checkpoint_file)
        if kind == storage.FORMAT_REGNN:
            params = storage.read_params(checkpoint_file)
            adapted = runtime_finetune(
                params, test_period, steps, runtime.gamma, budget,
                policy.sigma2, policy.normalization
            )
            filename = self.paths.params_file('adapted')
            storage.write_params(filename, adapted, seed=self.config.seed)
            return {'file': filename}
        elif kind == storage.FORMAT_MODULES:
            mods = storage.read_modules(checkpoint_file)
            history = list()
            s = runtime_adapt_modular(
                mods, test_period, budget, steps, runtime.gamma,
                self.config.modular.schedule,
                self.rng.child('adapt').child(os.path.basename(dataset_file)),
                policy.sigma2, policy.layers,
                normalization=policy.normalization,
                history=history
            )
            filename = self.paths.assignment_file()
            storage.write_assignment(filename, s)
            log_file = self.paths.adaptation_log_file()
            storage.write_adaptation_log(log_file, history)
            return {'file': filename, 'log': log_file, 'assignment': list(s)}
        raise ParseError('{} is not a checkpoint'.format(checkpoint_file))

    def evaluate(self, checkpoint_file, dataset_file, period=0, assignment_file=None):
        """Mean sum-rate of a policy on the test slots of one period. Module
        repositories require an assignment file.

        Returns
        -------
        dict
        """
        test_period = self._load_period(dataset_file, period)
        policy = self.config.policy
        kind = storage.document_format(checkpoint_file)
        if kind == storage.FORMAT_REGNN:
            params = storage.read_params(checkpoint_file)
            rate = evaluate_params(params, test_period, policy.sigma2, policy.normalization)
        elif kind == storage.FORMAT_MODULES:
            if assignment_file is None:
                raise ParseError('evaluating modules requires an assignment file')
            mods = storage.read_modules(checkpoint_file)
            s = storage.read_assignment(assignment_file)
            rate = hard_objective(
                mods, s, test_period.test_realizations(), policy.sigma2, policy.normalization
            )
        else:
            raise ParseError('{} is not a checkpoint'.format(checkpoint_file))
        return {'period': test_period.period_id, 'sum_rate': rate}

    def run_experiment(self, name=None, threads=None):
        """Run the configured experiment or a preset (with the engine's
        configuration as base for all keys the preset does not set).

        Returns
        -------
        dict
        """
        cfg = self.config if name is None else preset(name, base=self.config)
        rows = run_experiment(cfg, paths=self.paths, threads=threads)
        return {
            'experiment': cfg.experiment_id,
            'rows': len(rows),
            'results': self.paths.results_file()
        }
