"""Persistence of datasets, trained parameters and experiment results.

Datasets, parameter checkpoints and module assignments are stored as YAML
documents whose 'format' element identifies their content. Floats are
written with full precision so that reading a file returns bit-identical
arrays. Results, training logs and reports are written as CSV files with a
fixed column order and nine significant digits per float.

The PathFactory class names every file that an experiment writes.
"""

from __future__ import annotations

import csv
import os
import threading

import numpy as np
import yaml

from metapower.errors import ParseError
from metapower.modular import ModuleSet
from metapower.netsim import ChannelRealization, PeriodDataset, SimConfig, Topology
from metapower.regnn import ReGnnParams


# ------------------------------------------------------------------------------
#
# Constants
#
# ------------------------------------------------------------------------------

# Values of the 'format' element
FORMAT_DATASET = 'metapower-dataset'
FORMAT_REGNN = 'metapower-regnn'
FORMAT_MODULES = 'metapower-modules'
FORMAT_ASSIGNMENT = 'metapower-assignment'

# CSV headers
RESULT_COLUMNS = ['experiment_id', 'x_value', 'method', 'trial', 'sum_rate', 'wall_ms']
TRAINING_LOG_COLUMNS = ['meta_iter', 'mean_adapted_test_sum_rate', 'wall_ms']
JOINT_LOG_COLUMNS = ['step', 'pooled_train_sum_rate']
ADAPTATION_LOG_COLUMNS = ['step', 'temperature', 'train_sum_rate', 'entropy_of_rows']
HISTOGRAM_COLUMNS = ['module_index', 'frequency']
GAIN_COLUMNS = ['x_value', 'method', 'mean', 'stderr']


# ------------------------------------------------------------------------------
#
# Helpers
#
# ------------------------------------------------------------------------------

def format_value(value):
    """String representation of a CSV cell. Floats use nine significant
    digits, everything else str().
    """
    if isinstance(value, (float, np.floating)):
        return '{:.9g}'.format(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(filename, header, rows):
    """Write a CSV file with the given header and rows."""
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(filename):
    """Read a CSV file. Returns the header and the list of rows (strings)."""
    with open(filename, 'r', newline='') as f:
        rows = list(csv.reader(f))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def _read_document(filename, expected_format):
    with open(filename, 'r') as f:
        try:
            obj = yaml.safe_load(f)
        except yaml.YAMLError as ex:
            mark = getattr(ex, 'problem_mark', None)
            raise ParseError(
                'malformed file {}: {}'.format(filename, ex),
                line=mark.line + 1 if mark is not None else None
            )
    if not isinstance(obj, dict) or obj.get('format') != expected_format:
        raise ParseError('{} is not a {} document'.format(filename, expected_format))
    return obj


def _write_document(filename, obj):
    with open(filename, 'w') as f:
        yaml.safe_dump(obj, f, default_flow_style=None, sort_keys=False)


def _power_value(pmax):
    if isinstance(pmax, np.ndarray):
        return pmax.tolist()
    return float(pmax)


def _read_power(value):
    if isinstance(value, list):
        return np.array(value, dtype=float)
    return float(value)


# ------------------------------------------------------------------------------
#
# Datasets
#
# ------------------------------------------------------------------------------

def write_dataset(filename, periods, sim=None):
    """Write a list of periods (topology, channel realizations and the
    train/test split) to file.

    Parameters
    ----------
    filename : string
        Path of the output file
    periods : list(netsim.PeriodDataset)
        Periods to write
    sim : netsim.SimConfig, optional
        Simulation parameters the periods were generated with
    """
    doc = {'format': FORMAT_DATASET}
    if sim is not None:
        doc['sim'] = {
            'gamma': sim.gamma,
            'sigma2_dbm': sim.sigma2_dbm,
            'pmax_dbm': sim.pmax_dbm,
            'k': sim.k,
            'k_lo': sim.k_lo,
            'k_hi': sim.k_hi,
            'slots_per_period': sim.slots_per_period,
            'train_slots': sim.train_slots,
            'test_slots': sim.test_slots,
            'interference_radius': sim.interference_radius,
            'seed': sim.seed
        }
    doc['periods'] = [
        {
            'period_id': p.period_id,
            'k': p.k,
            'tx': p.topology.tx_positions.tolist(),
            'rx': p.topology.rx_positions.tolist(),
            'adjacency': p.topology.adjacency.astype(int).tolist(),
            'train_idx': list(p.train_idx),
            'test_idx': list(p.test_idx),
            'gains': [p.realizations[i].gains.tolist() for i in range(len(p.realizations))]
        }
            for p in periods
    ]
    _write_document(filename, doc)


def read_dataset(filename):
    """Read periods from a dataset file.

    Returns
    -------
    (list(netsim.PeriodDataset), netsim.SimConfig)
        The simulation parameters are None if the file does not contain them
    """
    doc = _read_document(filename, FORMAT_DATASET)
    sim = SimConfig(**doc['sim']) if doc.get('sim') is not None else None
    periods = list()
    try:
        for obj in doc['periods']:
            period_id = int(obj['period_id'])
            topology = Topology(
                period_id=period_id,
                k=int(obj['k']),
                tx_positions=np.array(obj['tx'], dtype=float),
                rx_positions=np.array(obj['rx'], dtype=float),
                adjacency=np.array(obj['adjacency'], dtype=bool)
            )
            realizations = [
                ChannelRealization(gains=np.array(g, dtype=float), slot=slot, period_id=period_id)
                    for slot, g in enumerate(obj['gains'])
            ]
            periods.append(
                PeriodDataset(
                    topology=topology,
                    realizations=realizations,
                    train_idx=tuple(int(i) for i in obj['train_idx']),
                    test_idx=tuple(int(i) for i in obj['test_idx'])
                )
            )
    except (KeyError, TypeError) as ex:
        raise ParseError('invalid period in {}: {}'.format(filename, ex))
    return periods, sim


# ------------------------------------------------------------------------------
#
# Checkpoints
#
# ------------------------------------------------------------------------------

def write_params(filename, params, seed=None):
    """Write REGNN filter taps to a checkpoint file."""
    _write_document(filename, {
        'format': FORMAT_REGNN,
        'layers': params.layers,
        'taps': params.n_taps,
        'pmax': _power_value(params.pmax),
        'filter_taps': params.taps.tolist(),
        'seed': seed
    })


def read_params(filename):
    """Read REGNN filter taps from a checkpoint file.

    Returns
    -------
    regnn.ReGnnParams
    """
    doc = _read_document(filename, FORMAT_REGNN)
    taps = np.array(doc['filter_taps'], dtype=float)
    if taps.shape != (doc['layers'], doc['taps']):
        raise ParseError('filter taps do not match the declared shape in ' + filename)
    return ReGnnParams(taps=taps, pmax=_read_power(doc['pmax']))


def write_modules(filename, mods, seed=None):
    """Write a module repository to a checkpoint file."""
    _write_document(filename, {
        'format': FORMAT_MODULES,
        'modules': mods.size,
        'taps': mods.n_taps,
        'pmax': _power_value(mods.pmax),
        'module_taps': mods.modules.tolist(),
        'seed': seed
    })


def read_modules(filename):
    """Read a module repository from a checkpoint file.

    Returns
    -------
    modular.ModuleSet
    """
    doc = _read_document(filename, FORMAT_MODULES)
    modules = np.array(doc['module_taps'], dtype=float)
    if modules.shape != (doc['modules'], doc['taps']):
        raise ParseError('module taps do not match the declared shape in ' + filename)
    return ModuleSet(modules=modules, pmax=_read_power(doc['pmax']))


def write_assignment(filename, assignment):
    _write_document(filename, {
        'format': FORMAT_ASSIGNMENT,
        'assignment': [int(i) for i in assignment]
    })


def read_assignment(filename):
    doc = _read_document(filename, FORMAT_ASSIGNMENT)
    return tuple(int(i) for i in doc['assignment'])


def write_config(filename, properties):
    """Write configuration properties in the format that config.read_properties
    accepts."""
    _write_document(filename, {
        'properties': [{'key': key, 'value': value} for key, value in properties.items()]
    })


# ------------------------------------------------------------------------------
#
# Results and reports
#
# ------------------------------------------------------------------------------

class ResultsWriter(object):
    """Append-only writer for result rows. Every row is flushed to disk
    immediately so that a run that aborts leaves all completed rows behind.
    Writes from multiple threads are serialized.
    """
    def __init__(self, filename):
        self.filename = filename
        self.lock = threading.Lock()
        self.file = open(filename, 'w', newline='')
        self.writer = csv.writer(self.file)
        self.writer.writerow(RESULT_COLUMNS)
        self.file.flush()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()

    def close(self):
        with self.lock:
            if not self.file.closed:
                self.file.close()

    def write(self, row):
        """Write one result row (an object with the attributes listed in
        RESULT_COLUMNS)."""
        with self.lock:
            self.writer.writerow([format_value(getattr(row, col)) for col in RESULT_COLUMNS])
            self.file.flush()


def write_training_log(filename, history, timing=True):
    """Write (meta_iter, value, wall_ms) tuples. Without timing the wall
    clock column is zero."""
    write_csv(
        filename,
        TRAINING_LOG_COLUMNS,
        [(it, value, wall_ms if timing else 0.0) for it, value, wall_ms in history]
    )


def write_joint_log(filename, history):
    write_csv(filename, JOINT_LOG_COLUMNS, history)


def write_adaptation_log(filename, history):
    write_csv(filename, ADAPTATION_LOG_COLUMNS, history)


def write_cka(filename, matrix):
    """Write an M x M CKA matrix with one row per module."""
    m = matrix.shape[0]
    write_csv(
        filename,
        ['module'] + ['m' + str(j) for j in range(m)],
        [[i] + [float(v) for v in matrix[i]] for i in range(m)]
    )


def write_histogram(filename, frequencies):
    write_csv(filename, HISTOGRAM_COLUMNS, [(i, float(f)) for i, f in enumerate(frequencies)])


def write_gain(filename, rows):
    """Write (x_value, method, mean, stderr) rows of the gain table."""
    write_csv(filename, GAIN_COLUMNS, rows)


# ------------------------------------------------------------------------------
#
# Output file names
#
# ------------------------------------------------------------------------------

class PathFactory(object):
    """Names of all files that are written to an output directory.

    Attributes
    ----------
    out_dir : string
        Base directory for all output files
    """
    def __init__(self, out_dir):
        """Initialize the output directory. The directory is created if it
        does not exist.

        Parameters
        ----------
        out_dir : string
            Base directory for all output files
        """
        self.out_dir = os.path.abspath(out_dir)
        if not os.access(self.out_dir, os.F_OK):
            os.makedirs(self.out_dir)

    def _file(self, *parts):
        return os.path.join(self.out_dir, '_'.join(str(p) for p in parts if p is not None))

    @staticmethod
    def label(value):
        """File name fragment for a sweep value."""
        return format_value(value).replace('.', 'p').replace('-', 'm')

    def results_file(self):
        return os.path.join(self.out_dir, 'results.csv')

    def config_file(self):
        return os.path.join(self.out_dir, 'config.yaml')

    def dataset_file(self, name='dataset'):
        return self._file(name) + '.yaml'

    def params_file(self, method, trial=None, value=None):
        """Checkpoint of a trained policy (or module repository)."""
        return self._file(
            method.replace(':', '-'),
            None if trial is None else 'trial' + str(trial),
            None if value is None else self.label(value)
        ) + '.yaml'

    def assignment_file(self, name='assignment'):
        return self._file(name) + '.yaml'

    def training_log_file(self, method, trial=None, value=None):
        return self._file(
            'log',
            method.replace(':', '-'),
            None if trial is None else 'trial' + str(trial),
            None if value is None else self.label(value)
        ) + '.csv'

    def adaptation_log_file(self, name='adaptation'):
        return self._file('log', name) + '.csv'

    def cka_file(self, value):
        return self._file('cka', self.label(value)) + '.csv'

    def histogram_file(self, value):
        return self._file('histogram', self.label(value)) + '.csv'

    def gain_file(self):
        return os.path.join(self.out_dir, 'gain.csv')


def document_format(filename):
    """Value of the 'format' element of a YAML document (None if missing)."""
    with open(filename, 'r') as f:
        try:
            obj = yaml.safe_load(f)
        except yaml.YAMLError as ex:
            raise ParseError('malformed file {}: {}'.format(filename, ex))
    if not isinstance(obj, dict):
        return None
    return obj.get('format')
