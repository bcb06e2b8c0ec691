"""Configuration of experiments.

Configuration files contain a list of key-value pairs under the element
'properties' (dotted keys such as 'sim.gamma'). Omitted keys take the
default values listed in DEFAULTS. The file that is read is determined by
load_config(): an explicitly given path, else the file named by the
environment variable METAPOWER_CONFIG, else 'config.yaml' in the current
working directory. If none exists the defaults are used.

The following keys are recognized:

sim.gamma : Path-loss exponent
sim.sigma2_dbm : Noise power in dBm
sim.pmax_dbm : Maximum transmit power in dBm
sim.k : Fixed number of links (null for a per-period draw)
sim.k_lo, sim.k_hi : Range of the per-period number of links
sim.slots_per_period : Time slots per period
sim.train_slots, sim.test_slots : Size of D^tr and D^te
sim.interference_radius : Interference radius (null for full interference)
model.layers : Number of filter layers L
model.taps : Filter taps N
model.batch_size : Mini-batch size for joint learning
model.gso_normalization : 'spectral' or 'none'
meta.periods : Number of meta-training periods
meta.iterations : Number of meta-iterations
meta.inner_steps, meta.outer_steps : FOMAML update counts
meta.gamma, meta.delta : FOMAML inner and outer step sizes
meta.meta_batch : Periods per meta-iteration ('all' or a number)
joint.steps, joint.lr : Joint learning updates per iteration and step size
modular.* : Modular meta-learning (modules, inner_steps, outer_steps, gamma,
            delta, lambda0, decay, lambda_min, search_cap)
runtime.budget, runtime.steps, runtime.gamma : Adaptation to a new period
experiment.* : Harness (id, trials, sweep, values, methods, reports, timing,
               seed, out_dir, threads)
app.debug : Switch debug logging ON/OFF
app.logdir : Directory for log files (optional)
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import os
import re
from typing import Optional

import yaml

from metapower.errors import ParseError, ValidationError
from metapower.fomaml import MetaConfig
from metapower.modular import ModularConfig, TemperatureSchedule
from metapower.netsim import GSO_NORMALIZATIONS, SimConfig
from metapower.regnn import PolicyConfig


# ------------------------------------------------------------------------------
#
# Constants
#
# ------------------------------------------------------------------------------

# Environment variable containing the path to the configuration file
ENV_CONFIG = 'METAPOWER_CONFIG'
# Configuration file that is used if no other file is given
LOCAL_CONFIG_FILE = './config.yaml'

# Sweep variables
SWEEP_ADAPTATION_SAMPLES = 'adaptation_samples'
SWEEP_ADAPTATION_ITERATIONS = 'adaptation_iterations'
SWEEP_META_PERIODS = 'meta_periods'
SWEEP_INTERFERENCE_RADIUS = 'interference_radius'

SWEEPS = [
    SWEEP_ADAPTATION_SAMPLES,
    SWEEP_ADAPTATION_ITERATIONS,
    SWEEP_META_PERIODS,
    SWEEP_INTERFERENCE_RADIUS
]

# Methods
METHOD_JOINT = 'joint'
METHOD_FOMAML = 'fomaml'
METHOD_MODULAR = 'modular'
METHOD_MODULAR_EXHAUSTIVE = 'modular-exhaustive'
METHOD_FULL_POWER = 'full-power'
METHOD_RANDOM_POWER = 'random-power'
METHOD_WMMSE = 'wmmse'

METHODS = [
    METHOD_JOINT,
    METHOD_FOMAML,
    METHOD_MODULAR,
    METHOD_MODULAR_EXHAUSTIVE,
    METHOD_FULL_POWER,
    METHOD_RANDOM_POWER,
    METHOD_WMMSE
]

# Reports
REPORT_GAIN = 'gain'
REPORT_CKA = 'cka'
REPORT_HISTOGRAM = 'histogram'

REPORTS = [REPORT_GAIN, REPORT_CKA, REPORT_HISTOGRAM]

# Default value of every recognized key
DEFAULTS = {
    'sim.gamma': 2.2,
    'sim.sigma2_dbm': -70.0,
    'sim.pmax_dbm': -35.0,
    'sim.k': None,
    'sim.k_lo': 4,
    'sim.k_hi': 20,
    'sim.slots_per_period': 100,
    'sim.train_slots': 50,
    'sim.test_slots': 50,
    'sim.interference_radius': None,
    'model.layers': 2,
    'model.taps': 4,
    'model.batch_size': 64,
    'model.gso_normalization': 'spectral',
    'meta.periods': 10,
    'meta.iterations': 200,
    'meta.inner_steps': 5,
    'meta.outer_steps': 5,
    'meta.gamma': 1e-4,
    'meta.delta': 1e-4,
    'meta.meta_batch': 'all',
    'joint.steps': 5,
    'joint.lr': 1e-4,
    'modular.modules': 6,
    'modular.inner_steps': 2,
    'modular.outer_steps': 5,
    'modular.gamma': 1e-4,
    'modular.delta': 1e-4,
    'modular.lambda0': 1.0,
    'modular.decay': math.exp(-0.025),
    'modular.lambda_min': 0.5,
    'modular.search_cap': 4096,
    'runtime.budget': 10,
    'runtime.steps': 5,
    'runtime.gamma': 1e-4,
    'experiment.id': 'experiment',
    'experiment.trials': 10,
    'experiment.sweep': SWEEP_ADAPTATION_SAMPLES,
    'experiment.values': [10],
    'experiment.methods': [METHOD_JOINT, METHOD_FOMAML, METHOD_MODULAR],
    'experiment.reports': [],
    'experiment.timing': False,
    'experiment.seed': 0,
    'experiment.out_dir': './results',
    'experiment.threads': 1,
    'app.debug': False,
    'app.logdir': None
}


# ------------------------------------------------------------------------------
#
# Domain types
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True)
class RuntimeConfig(object):
    """Adaptation to a new period: number of training slots that may be
    used, number of ascent steps and step size."""
    budget: int = 10
    steps: int = 5
    gamma: float = 1e-4

    def __post_init__(self):
        if self.budget < 0 or self.steps < 0:
            raise ValidationError('runtime budget and steps must be non-negative')
        if not self.gamma > 0:
            raise ValidationError('runtime step size must be positive')


@dataclass(frozen=True)
class ExperimentConfig(object):
    """Complete, validated configuration of an experiment run."""
    sim: SimConfig = field(default_factory=SimConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    modular: ModularConfig = field(default_factory=ModularConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    meta_periods: int = 10
    experiment_id: str = 'experiment'
    trials: int = 10
    sweep: str = SWEEP_ADAPTATION_SAMPLES
    values: tuple = (10,)
    methods: tuple = (METHOD_JOINT, METHOD_FOMAML, METHOD_MODULAR)
    reports: tuple = ()
    timing: bool = False
    seed: int = 0
    out_dir: str = './results'
    threads: int = 1
    debug: bool = False
    logdir: Optional[str] = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValidationError('number of trials must be at least 1')
        if self.meta_periods < 1:
            raise ValidationError('number of meta-training periods must be at least 1')
        if self.sweep not in SWEEPS:
            raise ValidationError('unknown sweep variable: ' + str(self.sweep))
        if not self.values:
            raise ValidationError('sweep values must not be empty')
        if not self.methods:
            raise ValidationError('at least one method is required')
        for method in self.methods:
            method_modules(method)
        for report in self.reports:
            if report not in REPORTS:
                raise ValidationError('unknown report: ' + str(report))
        if self.threads < 1:
            raise ValidationError('number of threads must be at least 1')
        if self.seed < 0:
            raise ValidationError('seed must be non-negative')


def method_modules(method):
    """Number of modules requested by a method name ('modular:<M>'), None
    for methods that do not name a module count. Raises ValidationError for
    unknown methods.
    """
    if method in METHODS:
        return None
    match = re.fullmatch(r'modular:(\d+)', str(method))
    if match is None:
        raise ValidationError('unknown method: ' + str(method))
    m = int(match.group(1))
    if m < 1:
        raise ValidationError('number of modules must be at least 1: ' + method)
    return m


# ------------------------------------------------------------------------------
#
# Reading configuration files
#
# ------------------------------------------------------------------------------

class ConfigLoader(yaml.SafeLoader):
    """Safe loader that also reads exponent notation without a dot (1e-4)
    as a float."""
    pass


ConfigLoader.add_implicit_resolver(
    'tag:yaml.org,2002:float',
    re.compile(r'''^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$''', re.X),
    list('-+0123456789.')
)


def read_properties(text):
    """Parse the properties list of a configuration document.

    Returns a dictionary that maps keys to values. Unknown or duplicate keys
    and malformed documents raise ParseError with the offending line.

    Parameters
    ----------
    text : string
        Content of the configuration file

    Returns
    -------
    dict
    """
    try:
        root = yaml.compose(text, Loader=ConfigLoader)
        obj = yaml.load(text, Loader=ConfigLoader)
    except yaml.YAMLError as ex:
        mark = getattr(ex, 'problem_mark', None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError('malformed configuration: ' + str(getattr(ex, 'problem', ex)), line=line)
    if root is None:
        return dict()
    line = root.start_mark.line + 1
    if not isinstance(obj, dict):
        raise ParseError('configuration must be a mapping', line=line)
    for key in obj:
        if key != 'properties':
            raise ParseError('unknown element: ' + str(key), key=key, line=line)
    items = obj.get('properties') or []
    nodes = dict((k.value, v) for k, v in root.value).get('properties')
    if not isinstance(items, list):
        raise ParseError('properties must be a list', line=line)
    properties = dict()
    for i, kvp in enumerate(items):
        item_line = nodes.value[i].start_mark.line + 1
        if not isinstance(kvp, dict) or set(kvp.keys()) != set(['key', 'value']):
            raise ParseError('property needs exactly a key and a value', line=item_line)
        key = kvp['key']
        if key not in DEFAULTS:
            raise ParseError('unknown key: ' + str(key), key=key, line=item_line)
        if key in properties:
            raise ParseError('duplicate key: ' + str(key), key=key, line=item_line)
        properties[key] = kvp['value']
    return properties


def parse_config(path):
    """Read and validate the configuration file at the given path."""
    with open(path, 'r') as f:
        text = f.read()
    return build_config(read_properties(text))


def load_config(path=None):
    """Load the configuration following the lookup order: explicit path,
    file named by METAPOWER_CONFIG, ./config.yaml, built-in defaults.

    Returns
    -------
    ExperimentConfig
    """
    if path is not None:
        return parse_config(path)
    env_file = os.getenv(ENV_CONFIG)
    if env_file is not None and os.path.isfile(env_file):
        return parse_config(env_file)
    if os.path.isfile(LOCAL_CONFIG_FILE):
        return parse_config(LOCAL_CONFIG_FILE)
    return build_config(dict())


# ------------------------------------------------------------------------------
#
# Building configuration objects
#
# ------------------------------------------------------------------------------

def _number(key, value, kind, optional=False):
    if value is None and optional:
        return None
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ValidationError('{} must be a number, got {!r}'.format(key, value))
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError('{} must be a number, got {!r}'.format(key, value))
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError('{} must be an integer, got {!r}'.format(key, value))
        return int(value)
    return float(value)


def _flag(key, value):
    if not isinstance(value, bool):
        raise ValidationError('{} must be true or false'.format(key))
    return value


def _string_list(key, value):
    if isinstance(value, str):
        value = [v.strip() for v in value.split(',') if v.strip()]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValidationError('{} must be a list of names'.format(key))
    return tuple(value)


def _sweep_values(sweep, value):
    if not isinstance(value, list):
        value = [value]
    kind = float if sweep == SWEEP_INTERFERENCE_RADIUS else int
    return tuple(_number('experiment.values', v, kind) for v in value)


def build_config(properties):
    """Merge the given properties with the defaults and create the
    validated configuration object.

    Parameters
    ----------
    properties : dict
        Values for (a subset of) the keys in DEFAULTS

    Returns
    -------
    ExperimentConfig
    """
    for key in properties:
        if key not in DEFAULTS:
            raise ParseError('unknown key: ' + str(key), key=key)
    conf = dict(DEFAULTS)
    conf.update(properties)
    sim = SimConfig(
        gamma=_number('sim.gamma', conf['sim.gamma'], float),
        sigma2_dbm=_number('sim.sigma2_dbm', conf['sim.sigma2_dbm'], float),
        pmax_dbm=_number('sim.pmax_dbm', conf['sim.pmax_dbm'], float),
        k=_number('sim.k', conf['sim.k'], int, optional=True),
        k_lo=_number('sim.k_lo', conf['sim.k_lo'], int),
        k_hi=_number('sim.k_hi', conf['sim.k_hi'], int),
        slots_per_period=_number('sim.slots_per_period', conf['sim.slots_per_period'], int),
        train_slots=_number('sim.train_slots', conf['sim.train_slots'], int),
        test_slots=_number('sim.test_slots', conf['sim.test_slots'], int),
        interference_radius=_number(
            'sim.interference_radius', conf['sim.interference_radius'], float, optional=True
        ),
        seed=_number('experiment.seed', conf['experiment.seed'], int)
    )
    normalization = conf['model.gso_normalization']
    if normalization not in GSO_NORMALIZATIONS:
        raise ValidationError('unknown model.gso_normalization: ' + str(normalization))
    policy = PolicyConfig(
        layers=_number('model.layers', conf['model.layers'], int),
        n_taps=_number('model.taps', conf['model.taps'], int),
        pmax=sim.pmax,
        sigma2=sim.sigma2,
        normalization=normalization,
        batch_size=_number('model.batch_size', conf['model.batch_size'], int)
    )
    meta_batch = conf['meta.meta_batch']
    if meta_batch == 'all' or meta_batch is None:
        meta_batch = None
    else:
        meta_batch = _number('meta.meta_batch', meta_batch, int)
    meta = MetaConfig(
        iterations=_number('meta.iterations', conf['meta.iterations'], int),
        inner_steps=_number('meta.inner_steps', conf['meta.inner_steps'], int),
        outer_steps=_number('meta.outer_steps', conf['meta.outer_steps'], int),
        gamma=_number('meta.gamma', conf['meta.gamma'], float),
        delta=_number('meta.delta', conf['meta.delta'], float),
        meta_batch=meta_batch,
        joint_steps=_number('joint.steps', conf['joint.steps'], int),
        joint_lr=_number('joint.lr', conf['joint.lr'], float)
    )
    modular = ModularConfig(
        modules=_number('modular.modules', conf['modular.modules'], int),
        iterations=meta.iterations,
        inner_steps=_number('modular.inner_steps', conf['modular.inner_steps'], int),
        outer_steps=_number('modular.outer_steps', conf['modular.outer_steps'], int),
        gamma=_number('modular.gamma', conf['modular.gamma'], float),
        delta=_number('modular.delta', conf['modular.delta'], float),
        meta_batch=meta_batch,
        schedule=TemperatureSchedule(
            lambda0=_number('modular.lambda0', conf['modular.lambda0'], float),
            decay=_number('modular.decay', conf['modular.decay'], float),
            lambda_min=_number('modular.lambda_min', conf['modular.lambda_min'], float)
        ),
        search_cap=_number('modular.search_cap', conf['modular.search_cap'], int)
    )
    runtime = RuntimeConfig(
        budget=_number('runtime.budget', conf['runtime.budget'], int),
        steps=_number('runtime.steps', conf['runtime.steps'], int),
        gamma=_number('runtime.gamma', conf['runtime.gamma'], float)
    )
    sweep = conf['experiment.sweep']
    return ExperimentConfig(
        sim=sim,
        policy=policy,
        meta=meta,
        modular=modular,
        runtime=runtime,
        meta_periods=_number('meta.periods', conf['meta.periods'], int),
        experiment_id=str(conf['experiment.id']),
        trials=_number('experiment.trials', conf['experiment.trials'], int),
        sweep=sweep,
        values=_sweep_values(sweep, conf['experiment.values']),
        methods=_string_list('experiment.methods', conf['experiment.methods']),
        reports=_string_list('experiment.reports', conf['experiment.reports']),
        timing=_flag('experiment.timing', conf['experiment.timing']),
        seed=sim.seed,
        out_dir=str(conf['experiment.out_dir']),
        threads=_number('experiment.threads', conf['experiment.threads'], int),
        debug=_flag('app.debug', conf['app.debug']),
        logdir=conf['app.logdir']
    )


def to_properties(cfg):
    """Flatten a configuration object into the dictionary of keys that
    build_config() accepts; build_config(to_properties(cfg)) equals cfg.
    """
    return {
        'sim.gamma': cfg.sim.gamma,
        'sim.sigma2_dbm': cfg.sim.sigma2_dbm,
        'sim.pmax_dbm': cfg.sim.pmax_dbm,
        'sim.k': cfg.sim.k,
        'sim.k_lo': cfg.sim.k_lo,
        'sim.k_hi': cfg.sim.k_hi,
        'sim.slots_per_period': cfg.sim.slots_per_period,
        'sim.train_slots': cfg.sim.train_slots,
        'sim.test_slots': cfg.sim.test_slots,
        'sim.interference_radius': cfg.sim.interference_radius,
        'model.layers': cfg.policy.layers,
        'model.taps': cfg.policy.n_taps,
        'model.batch_size': cfg.policy.batch_size,
        'model.gso_normalization': cfg.policy.normalization,
        'meta.periods': cfg.meta_periods,
        'meta.iterations': cfg.meta.iterations,
        'meta.inner_steps': cfg.meta.inner_steps,
        'meta.outer_steps': cfg.meta.outer_steps,
        'meta.gamma': cfg.meta.gamma,
        'meta.delta': cfg.meta.delta,
        'meta.meta_batch': 'all' if cfg.meta.meta_batch is None else cfg.meta.meta_batch,
        'joint.steps': cfg.meta.joint_steps,
        'joint.lr': cfg.meta.joint_lr,
        'modular.modules': cfg.modular.modules,
        'modular.inner_steps': cfg.modular.inner_steps,
        'modular.outer_steps': cfg.modular.outer_steps,
        'modular.gamma': cfg.modular.gamma,
        'modular.delta': cfg.modular.delta,
        'modular.lambda0': cfg.modular.schedule.lambda0,
        'modular.decay': cfg.modular.schedule.decay,
        'modular.lambda_min': cfg.modular.schedule.lambda_min,
        'modular.search_cap': cfg.modular.search_cap,
        'runtime.budget': cfg.runtime.budget,
        'runtime.steps': cfg.runtime.steps,
        'runtime.gamma': cfg.runtime.gamma,
        'experiment.id': cfg.experiment_id,
        'experiment.trials': cfg.trials,
        'experiment.sweep': cfg.sweep,
        'experiment.values': list(cfg.values),
        'experiment.methods': list(cfg.methods),
        'experiment.reports': list(cfg.reports),
        'experiment.timing': cfg.timing,
        'experiment.seed': cfg.seed,
        'experiment.out_dir': cfg.out_dir,
        'experiment.threads': cfg.threads,
        'app.debug': cfg.debug,
        'app.logdir': cfg.logdir
    }


def override(cfg, properties):
    """Configuration with some keys replaced by the given values."""
    merged = to_properties(cfg)
    merged.update(properties)
    return build_config(merged)
