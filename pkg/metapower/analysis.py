"""Post-hoc metrics for trained policies and module repositories.

Includes the linear centered kernel alignment (CKA) between module outputs,
the frequency of module assignments, the relative rate gain of one method
over another, and a summary of the direct-link SNR of a dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List

import numpy as np

from metapower.errors import (
    DegenerateInput, EmptyInput, IndexOutOfRange, NonpositiveReference,
    ShapeMismatch, ValidationError
)
from metapower.netsim import GSO_SPECTRAL, ChannelRealization, generate_period
from metapower.regnn import graph_filter, relu


# Defaults for the probe batch that module outputs are evaluated on
PROBE_SIZE = 64
PROBE_LINKS = 10

# Rounding error up to which CKA values above one are clipped
CKA_TOLERANCE = 1e-9


# ------------------------------------------------------------------------------
#
# Domain types
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProbeBatch(object):
    """Fixed set of channel realizations with one input signal each, shared
    by all modules that are compared.
    """
    realizations: List[ChannelRealization]
    inputs: np.ndarray

    def __post_init__(self):
        if not self.realizations:
            raise EmptyInput('probe batch is empty')
        k = self.realizations[0].k
        if any(g.k != k for g in self.realizations):
            raise ShapeMismatch('probe realizations must have the same number of links')
        if self.inputs.shape != (len(self.realizations), k):
            raise ShapeMismatch(
                'probe inputs must have shape {}'.format((len(self.realizations), k))
            )

    @property
    def k(self):
        return self.realizations[0].k

    def __len__(self):
        return len(self.realizations)


@dataclass(frozen=True)
class SnrSummary(object):
    """Distribution summary of the direct-link SNR in dB."""
    mean_db: float
    min_db: float
    max_db: float
    count: int


# ------------------------------------------------------------------------------
#
# Module similarity
#
# ------------------------------------------------------------------------------

def make_probe_batch(cfg, rng, size=PROBE_SIZE, k=PROBE_LINKS):
    """Draw a probe batch of `size` slots of one period with k links and
    all-ones inputs.

    Parameters
    ----------
    cfg : netsim.SimConfig
        Channel parameters (the number of links and slots are overridden)
    rng : netsim.RngStream
        Stream for the probe period
    size : int, optional
        Number of realizations
    k : int, optional
        Number of links

    Returns
    -------
    ProbeBatch
    """
    probe_cfg = replace(cfg, k=k, slots_per_period=size, train_slots=size, test_slots=0)
    period = generate_period(probe_cfg, 0, rng)
    realizations = period.train_realizations()
    return ProbeBatch(realizations=realizations, inputs=np.ones((size, k)))


def module_outputs(mods, probe, normalization=GSO_SPECTRAL):
    """Single-layer response relu(sum_n phi_n G^n x) of every module on the
    probe batch.

    Returns
    -------
    list(numpy.ndarray)
        One |probe| x K matrix per module
    """
    if probe.inputs.shape[1] != probe.k:
        raise ShapeMismatch('probe inputs do not match the number of links')
    gso = np.stack([g.shift_operator(normalization) for g in probe.realizations])
    return [relu(graph_filter(taps, gso, probe.inputs)) for taps in mods.modules]


def linear_cka(zi, zj, centered=False):
    """Linear CKA ||zj^T zi||_F^2 / (||zi^T zi||_F ||zj^T zj||_F).

    Parameters
    ----------
    zi : numpy.ndarray
        Output matrix (samples x features)
    zj : numpy.ndarray
        Output matrix of the same shape
    centered : bool, optional
        Subtract column means before comparing

    Returns
    -------
    float
    """
    zi = np.asarray(zi, dtype=float)
    zj = np.asarray(zj, dtype=float)
    if zi.ndim != 2 or zi.shape != zj.shape:
        raise ShapeMismatch('CKA needs two matrices of equal shape')
    if centered:
        zi = zi - zi.mean(axis=0, keepdims=True)
        zj = zj - zj.mean(axis=0, keepdims=True)
    norm_i = np.linalg.norm(zi.T @ zi)
    norm_j = np.linalg.norm(zj.T @ zj)
    if norm_i == 0 or norm_j == 0:
        raise DegenerateInput('CKA is undefined for an all-zero output matrix')
    value = np.linalg.norm(zj.T @ zi) ** 2 / (norm_i * norm_j)
    if not 0.0 <= value <= 1.0 + CKA_TOLERANCE:
        raise FloatingPointError('CKA evaluated to {} outside [0, 1]'.format(value))
    return float(min(value, 1.0))


def cka_matrix(mods, probe, centered=False, normalization=GSO_SPECTRAL, fill=None):
    """Pairwise linear CKA between all modules of a repository.

    A module whose output vanishes on the whole probe makes its CKA
    undefined. Without a fill value DegenerateInput is raised; otherwise the
    affected entries are set to fill.

    Returns
    -------
    numpy.ndarray
        Symmetric M x M matrix
    """
    if mods.size < 2:
        raise ValidationError('CKA matrix needs at least two modules')
    outputs = module_outputs(mods, probe, normalization)
    m = mods.size
    result = np.eye(m)
    for i in range(m):
        for j in range(i, m):
            try:
                value = linear_cka(outputs[i], outputs[j], centered=centered)
            except DegenerateInput:
                if fill is None:
                    raise
                value = fill
            if i == j and not np.isnan(value):
                value = 1.0
            result[i, j] = result[j, i] = value
    return result


# ------------------------------------------------------------------------------
#
# Summary statistics
#
# ------------------------------------------------------------------------------

def assignment_histogram(runs, m):
    """Frequency of each module index over all layers of all runs.

    Parameters
    ----------
    runs : list(tuple(int))
        Hard assignments
    m : int
        Number of modules

    Returns
    -------
    numpy.ndarray
        Frequencies that sum to one
    """
    indices = [int(i) for s in runs for i in s]
    if not indices:
        raise EmptyInput('no module assignments to count')
    if min(indices) < 0 or max(indices) >= m:
        raise IndexOutOfRange('assignment references a module outside 0..{}'.format(m - 1))
    counts = np.bincount(indices, minlength=m).astype(float)
    return counts / counts.sum()


def relative_rate_gain(c_ml, c_jl):
    """Relative gain (c_ml - c_jl) / c_ml of a meta-learned policy over the
    joint-learning reference."""
    if not c_ml > 0:
        raise NonpositiveReference('reference sum-rate must be positive: ' + str(c_ml))
    return (c_ml - c_jl) / c_ml


def empirical_sinr_stats(dataset, pmax, sigma2):
    """Summary of the direct-link SNR 10 log10(pmax g_kk / sigma2) over all
    links and slots of a period. Links without gain are excluded.

    Returns
    -------
    SnrSummary
    """
    realizations = dataset.train_realizations() + dataset.test_realizations()
    values = []
    for g in realizations:
        direct = np.diag(g.gains) * np.broadcast_to(np.asarray(pmax, dtype=float), (g.k,))
        direct = direct[direct > 0]
        values.append(10.0 * np.log10(direct / sigma2))
    values = np.concatenate(values) if values else np.empty(0)
    if values.size == 0:
        raise EmptyInput('dataset contains no direct links')
    return SnrSummary(
        mean_db=float(values.mean()),
        min_db=float(values.min()),
        max_db=float(values.max()),
        count=int(values.size)
    )
