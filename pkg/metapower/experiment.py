"""Experiment harness.

An experiment runs a number of independent trials. Every trial draws a
meta-training dataset and one held-out test period, trains every configured
method on the meta-training periods, adapts it to the test period with the
runtime budget and evaluates the mean sum-rate on the test slots of the test
period. One configuration parameter (the sweep variable) takes a list of
values; every trial is repeated for each value.

All randomness is derived from the global seed through labeled child
streams, so that identical configurations produce identical results, and all
methods of one trial see the same data.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import time
from typing import Dict, List, Tuple

import numpy as np

from metapower import config as conf
from metapower.analysis import (
    assignment_histogram, cka_matrix, make_probe_batch, relative_rate_gain
)
from metapower.baselines import BASELINES, evaluate_baseline
from metapower.errors import UnknownPreset, ValidationError
from metapower.fomaml import evaluate_params, joint_train, meta_train_fomaml, runtime_finetune
from metapower.modular import (
    exhaustive_assignment, hard_objective, meta_train_modular,
    runtime_adapt_modular, select_mode
)
from metapower.netsim import RngStream, generate_meta_dataset, generate_period
from metapower.storage import (
    PathFactory, ResultsWriter, format_value, write_cka, write_config, write_gain,
    write_histogram, write_training_log
)


logger = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
#
# Presets
#
# ------------------------------------------------------------------------------

RADIUS_FULL = [2, 4, 6, 8, 10, 14, 18]
RADIUS_SHORT = [2, 6, 10, 18]

# Configuration properties of the preset experiments. Keys that are not
# listed keep their default values.
PRESETS = {
    'fig4': {
        'modular.modules': 2,
        'meta.periods': 5,
        'experiment.sweep': conf.SWEEP_ADAPTATION_ITERATIONS,
        'experiment.values': [1, 2, 5, 10, 20, 50],
        'experiment.methods': [conf.METHOD_MODULAR, conf.METHOD_MODULAR_EXHAUSTIVE]
    },
    'fig5': {
        'experiment.sweep': conf.SWEEP_ADAPTATION_SAMPLES,
        'experiment.values': [1, 2, 5, 10, 20, 50],
        'experiment.methods': [
            conf.METHOD_JOINT, conf.METHOD_FOMAML, 'modular:4', 'modular:6'
        ]
    },
    'fig6': {
        'experiment.sweep': conf.SWEEP_META_PERIODS,
        'experiment.values': [1, 2, 5, 10, 15, 20],
        'experiment.methods': [conf.METHOD_JOINT, conf.METHOD_FOMAML, conf.METHOD_MODULAR]
    },
    'fig7': {
        'sim.k': 10,
        'experiment.sweep': conf.SWEEP_INTERFERENCE_RADIUS,
        'experiment.values': RADIUS_FULL,
        'experiment.methods': [conf.METHOD_JOINT, conf.METHOD_FOMAML, conf.METHOD_MODULAR],
        'experiment.reports': [conf.REPORT_GAIN]
    },
    'fig8': {
        'sim.k': 10,
        'experiment.sweep': conf.SWEEP_INTERFERENCE_RADIUS,
        'experiment.values': RADIUS_SHORT,
        'experiment.methods': [conf.METHOD_MODULAR],
        'experiment.reports': [conf.REPORT_CKA]
    },
    'fig9': {
        'sim.k': 10,
        'experiment.sweep': conf.SWEEP_INTERFERENCE_RADIUS,
        'experiment.values': RADIUS_SHORT,
        'experiment.methods': [conf.METHOD_MODULAR],
        'experiment.reports': [conf.REPORT_HISTOGRAM]
    }
}

# Sweeps whose value changes the generated data
DATA_SWEEPS = [conf.SWEEP_META_PERIODS, conf.SWEEP_INTERFERENCE_RADIUS]


def preset(name, base=None):
    """Configuration of a preset experiment.

    Parameters
    ----------
    name : string
        One of 'fig4', ..., 'fig9'
    base : config.ExperimentConfig, optional
        Configuration whose values are used for keys the preset does not
        set (defaults if not given)

    Returns
    -------
    config.ExperimentConfig
    """
    if name not in PRESETS:
        raise UnknownPreset('unknown preset: ' + str(name))
    properties = dict(PRESETS[name])
    properties['experiment.id'] = name
    if base is None:
        return conf.build_config(properties)
    return conf.override(base, properties)


# ------------------------------------------------------------------------------
#
# Domain types
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow(object):
    """Mean test sum-rate of one method in one trial for one sweep value."""
    experiment_id: str
    x_value: object
    method: str
    trial: int
    sum_rate: float
    wall_ms: float

    def __post_init__(self):
        if self.sum_rate < 0:
            raise ValidationError('sum-rate must be non-negative')


@dataclass
class TrialOutcome(object):
    """Everything one trial produces: result rows in (value, method) order,
    the trained module repositories and the runtime assignments of the
    modular methods per sweep value."""
    trial: int
    rows: List[ResultRow] = field(default_factory=list)
    modules: Dict[Tuple[object, str], object] = field(default_factory=dict)
    assignments: Dict[Tuple[object, str], tuple] = field(default_factory=dict)


# ------------------------------------------------------------------------------
#
# Trials
#
# ------------------------------------------------------------------------------

def value_config(cfg, value):
    """Configuration with the sweep variable set to the given value."""
    if cfg.sweep == conf.SWEEP_ADAPTATION_SAMPLES:
        return replace(cfg, runtime=replace(cfg.runtime, budget=int(value)))
    elif cfg.sweep == conf.SWEEP_ADAPTATION_ITERATIONS:
        return replace(cfg, runtime=replace(cfg.runtime, steps=int(value)))
    elif cfg.sweep == conf.SWEEP_META_PERIODS:
        return replace(cfg, meta_periods=int(value))
    elif cfg.sweep == conf.SWEEP_INTERFERENCE_RADIUS:
        return replace(cfg, sim=replace(cfg.sim, interference_radius=float(value)))
    raise ValidationError('unknown sweep variable: ' + str(cfg.sweep))


def modular_method_size(cfg, method):
    """Number of modules a modular method trains."""
    m = conf.method_modules(method)
    return cfg.modular.modules if m is None else m


def _modular_key(cfg, method):
    if method == conf.METHOD_MODULAR_EXHAUSTIVE:
        return 'modular:' + str(cfg.modular.modules)
    return 'modular:' + str(modular_method_size(cfg, method))


def _is_modular(method):
    return method == conf.METHOD_MODULAR or method.startswith('modular:')


class TrialRunner(object):
    """Runs all sweep values and methods of one trial.

    Trained models are cached by (data label, model key), so that sweeps
    which do not change the data train every method only once per trial.
    """
    def __init__(self, cfg, trial, paths=None):
        self.cfg = cfg
        self.trial = trial
        self.paths = paths
        self.rng = RngStream(cfg.seed).child('trial-' + str(trial))
        self.data = dict()
        self.models = dict()

    def _data_label(self, value):
        if self.cfg.sweep in DATA_SWEEPS:
            return 'value-' + PathFactory.label(value)
        return 'shared'

    def _data(self, vcfg, value):
        label = self._data_label(value)
        if label not in self.data:
            data_rng = self.rng if label == 'shared' else self.rng.child(label)
            meta_data = generate_meta_dataset(vcfg.sim, vcfg.meta_periods, data_rng.child('meta'))
            test_period = generate_period(vcfg.sim, vcfg.meta_periods, data_rng.child('test'))
            self.data[label] = (data_rng, meta_data, test_period)
        return self.data[label]

    def _model(self, vcfg, value, key):
        label = self._data_label(value)
        if (label, key) in self.models:
            return self.models[(label, key)], 0.0
        data_rng, meta_data, _ = self._data(vcfg, value)
        init_rng = data_rng.child('init').child(key)
        start = time.perf_counter()
        history = list()
        if key == conf.METHOD_JOINT:
            model = joint_train(meta_data, vcfg.policy, vcfg.meta, init_rng)
        elif key == conf.METHOD_FOMAML:
            model = meta_train_fomaml(meta_data, vcfg.policy, vcfg.meta, init_rng, history=history)
        else:
            m = int(key.split(':')[1])
            model = meta_train_modular(
                meta_data, vcfg.policy, replace(vcfg.modular, modules=m), init_rng, history=history
            )
        elapsed = (time.perf_counter() - start) * 1000.0
        if self.paths is not None and history:
            write_training_log(
                self.paths.training_log_file(
                    key, self.trial, None if label == 'shared' else value
                ),
                history,
                timing=self.cfg.timing
            )
        self.models[(label, key)] = model
        return model, elapsed

    def evaluate(self, vcfg, value, method, outcome):
        """Mean test sum-rate of one method for one sweep value."""
        _, _, test_period = self._data(vcfg, value)
        policy, runtime = vcfg.policy, vcfg.runtime
        adapt_rng = self.rng.child('adapt-' + method + '-' + PathFactory.label(value))
        if method in BASELINES:
            start = time.perf_counter()
            rate = evaluate_baseline(method, test_period, policy.pmax, policy.sigma2, adapt_rng)
            return rate, (time.perf_counter() - start) * 1000.0
        if method in (conf.METHOD_JOINT, conf.METHOD_FOMAML):
            params, train_ms = self._model(vcfg, value, method)
            start = time.perf_counter()
            adapted = runtime_finetune(
                params, test_period, runtime.steps, runtime.gamma, runtime.budget,
                policy.sigma2, policy.normalization
            )
            rate = evaluate_params(adapted, test_period, policy.sigma2, policy.normalization)
            return rate, train_ms + (time.perf_counter() - start) * 1000.0
        mods, train_ms = self._model(vcfg, value, _modular_key(vcfg, method))
        start = time.perf_counter()
        if method == conf.METHOD_MODULAR_EXHAUSTIVE:
            train = test_period.train_realizations(runtime.budget)
            if train:
                s, _ = exhaustive_assignment(
                    mods, train, policy.sigma2, policy.layers,
                    cap=vcfg.modular.search_cap,
                    normalization=policy.normalization
                )
            else:
                s = select_mode(np.zeros((policy.layers, mods.size)))
        else:
            s = runtime_adapt_modular(
                mods, test_period, runtime.budget, runtime.steps, runtime.gamma,
                vcfg.modular.schedule, adapt_rng, policy.sigma2, policy.layers,
                normalization=policy.normalization
            )
        rate = hard_objective(
            mods, s, test_period.test_realizations(), policy.sigma2, policy.normalization
        )
        outcome.modules[(value, method)] = mods
        outcome.assignments[(value, method)] = s
        return rate, train_ms + (time.perf_counter() - start) * 1000.0

    def run(self):
        outcome = TrialOutcome(trial=self.trial)
        for value in self.cfg.values:
            vcfg = value_config(self.cfg, value)
            for method in self.cfg.methods:
                rate, wall_ms = self.evaluate(vcfg, value, method, outcome)
                outcome.rows.append(
                    ResultRow(
                        experiment_id=self.cfg.experiment_id,
                        x_value=value,
                        method=method,
                        trial=self.trial,
                        sum_rate=max(float(rate), 0.0),
                        wall_ms=wall_ms if self.cfg.timing else 0.0
                    )
                )
        logger.info('trial %d of %s finished', self.trial, self.cfg.experiment_id)
        return outcome


def run_trial(cfg, trial, paths=None):
    """Run all sweep values and methods of one trial.

    Returns
    -------
    TrialOutcome
    """
    return TrialRunner(cfg, trial, paths=paths).run()


# ------------------------------------------------------------------------------
#
# Reports
#
# ------------------------------------------------------------------------------

def _mean_stderr(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def gain_table(cfg, rows):
    """Relative rate gain of every method over joint learning, paired per
    trial, as (x_value, method, mean, stderr) rows."""
    rates = dict(((r.x_value, r.method, r.trial), r.sum_rate) for r in rows)
    table = list()
    for value in cfg.values:
        for method in cfg.methods:
            if method == conf.METHOD_JOINT:
                continue
            gains = [
                relative_rate_gain(
                    rates[(value, method, t)], rates[(value, conf.METHOD_JOINT, t)]
                )
                    for t in range(cfg.trials)
            ]
            mean, stderr = _mean_stderr(gains)
            table.append((value, method, mean, stderr))
    return table


def _report_method(cfg):
    for method in cfg.methods:
        if _is_modular(method):
            return method
    return None


def mean_cka(cfg, value, outcomes, method):
    """Trial mean of the CKA matrices of the module repositories trained
    for one sweep value. Undefined entries are skipped."""
    vcfg = value_config(cfg, value)
    probe = make_probe_batch(
        vcfg.sim, RngStream(cfg.seed).child('probe').child(PathFactory.label(value))
    )
    total, count = None, None
    for outcome in outcomes:
        matrix = cka_matrix(
            outcome.modules[(value, method)], probe,
            normalization=vcfg.policy.normalization,
            fill=np.nan
        )
        if total is None:
            total = np.zeros(matrix.shape)
            count = np.zeros(matrix.shape)
        valid = ~np.isnan(matrix)
        total[valid] += matrix[valid]
        count[valid] += 1
    mean = np.full(total.shape, np.nan)
    mean[count > 0] = total[count > 0] / count[count > 0]
    return mean


def write_reports(cfg, outcomes, rows, paths):
    """Write the configured reports."""
    if conf.REPORT_GAIN in cfg.reports:
        write_gain(paths.gain_file(), gain_table(cfg, rows))
    method = _report_method(cfg)
    for value in cfg.values:
        if conf.REPORT_CKA in cfg.reports:
            write_cka(paths.cka_file(value), mean_cka(cfg, value, outcomes, method))
        if conf.REPORT_HISTOGRAM in cfg.reports:
            runs = [o.assignments[(value, method)] for o in outcomes]
            m = modular_method_size(cfg, method)
            write_histogram(paths.histogram_file(value), assignment_histogram(runs, m))


# ------------------------------------------------------------------------------
#
# Experiments
#
# ------------------------------------------------------------------------------

def check_experiment(cfg):
    """Raise ValidationError if the configured reports cannot be produced
    from the configured methods."""
    if conf.REPORT_GAIN in cfg.reports and conf.METHOD_JOINT not in cfg.methods:
        raise ValidationError('the gain report requires the joint method')
    needs_modular = conf.REPORT_CKA in cfg.reports or conf.REPORT_HISTOGRAM in cfg.reports
    if needs_modular and _report_method(cfg) is None:
        raise ValidationError('CKA and histogram reports require a modular method')
    if conf.REPORT_CKA in cfg.reports and modular_method_size(cfg, _report_method(cfg)) < 2:
        raise ValidationError('the CKA report requires at least two modules')


def run_experiment(cfg, paths=None, threads=None):
    """Run all trials of an experiment and write results and reports.

    Trials run on a pool of threads; results are collected in trial order
    and written by a single writer, so the output does not depend on the
    number of threads.

    Parameters
    ----------
    cfg : config.ExperimentConfig
        Experiment configuration
    paths : storage.PathFactory, optional
        Output file names (defaults to the configured output directory)
    threads : int, optional
        Number of worker threads (defaults to the configured number)

    Returns
    -------
    list(ResultRow)
    """
    check_experiment(cfg)
    if paths is None:
        paths = PathFactory(cfg.out_dir)
    if threads is None:
        threads = cfg.threads
    write_config(paths.config_file(), conf.to_properties(cfg))
    logger.info(
        'running %s: %d trials, %s = %s, methods %s',
        cfg.experiment_id,
        cfg.trials,
        cfg.sweep,
        ', '.join(format_value(v) for v in cfg.values),
        ', '.join(cfg.methods)
    )
    rows, outcomes = list(), list()
    with ResultsWriter(paths.results_file()) as writer:
        executor = ThreadPoolExecutor(max_workers=threads)
        try:
            for outcome in executor.map(lambda t: run_trial(cfg, t, paths), range(cfg.trials)):
                for row in outcome.rows:
                    writer.write(row)
                rows.extend(outcome.rows)
                outcomes.append(outcome)
        finally:
            executor.shutdown(wait=True, cancel_futures=True)
    write_reports(cfg, outcomes, rows, paths)
    return rows
