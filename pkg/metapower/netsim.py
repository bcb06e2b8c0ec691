"""Network simulator for interference-limited wireless networks.

A period fixes a random drop of K transmitter/receiver pairs in the plane and
with it the path-loss between every transmitter and every receiver. Within a
period, every time slot carries an independent Rayleigh fast-fading draw. The
product of both components gives the channel gain matrix G for that slot,
where entry [G]_{j,k} is the power gain from transmitter j to receiver k.

All random draws go through RngStream objects. A stream is derived from a
single integer seed and a path of labels, so that every period, trial or
method owns an independent and reproducible source of randomness.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import hashlib
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from metapower.errors import DegenerateGeometry, ShapeMismatch, ValidationError


logger = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
#
# Constants
#
# ------------------------------------------------------------------------------

# Valid values for the normalization of the graph shift operator
GSO_NONE = 'none'
GSO_SPECTRAL = 'spectral'

GSO_NORMALIZATIONS = [GSO_NONE, GSO_SPECTRAL]


# ------------------------------------------------------------------------------
#
# Random number streams
#
# ------------------------------------------------------------------------------

class RngStream(object):
    """Seeded pseudo-random stream that can be split into labeled children.

    The stream is a numpy Generator seeded from a SeedSequence whose spawn key
    is the path of labels that lead to it. Children with different labels are
    statistically independent, and the same (seed, path) always reproduces
    the same sequence of draws.

    Attributes
    ----------
    seed : int
        Root seed shared by all streams of one run
    path : tuple(int)
        Hashed labels that identify this stream below the root
    generator : numpy.random.Generator
        Generator used for all draws from this stream
    """
    def __init__(self, seed, path=()):
        """Initialize the generator for the given seed and label path.

        Parameters
        ----------
        seed : int
            Non-negative root seed (64 bit)
        path : tuple(int), optional
            Hashed labels of the stream
        """
        if seed < 0:
            raise ValidationError('seed must be non-negative: ' + str(seed))
        self.seed = int(seed)
        self.path = tuple(path)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.path))
        )

    def child(self, label):
        """Get the independent child stream for the given label. Calling the
        method twice with the same label returns two streams that produce
        identical draws.

        Parameters
        ----------
        label : string or int
            Label that identifies the child below this stream

        Returns
        -------
        RngStream
        """
        digest = hashlib.blake2b(str(label).encode('utf-8'), digest_size=8).digest()
        return RngStream(self.seed, self.path + (int.from_bytes(digest, 'little'),))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high, size=None):
        """Integer-uniform draw on the closed interval [low, high]."""
        return self.generator.integers(low, high, size=size, endpoint=True)

    def rayleigh(self, scale=1.0, size=None):
        return self.generator.rayleigh(scale, size)


# ------------------------------------------------------------------------------
#
# Domain types
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig(object):
    """Channel and dataset parameters for the network simulator.

    Either a fixed number of links k is given, or links are drawn per period
    integer-uniformly from [k_lo, k_hi]. A missing interference radius gives
    a fully connected interference graph.
    """
    gamma: float = 2.2
    sigma2_dbm: float = -70.0
    pmax_dbm: float = -35.0
    k: Optional[int] = None
    k_lo: int = 4
    k_hi: int = 20
    slots_per_period: int = 100
    train_slots: int = 50
    test_slots: int = 50
    interference_radius: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError('path-loss exponent must be positive')
        if self.k is not None:
            if self.k < 1:
                raise ValidationError('number of links must be at least 1')
        else:
            if self.k_lo < 1:
                raise ValidationError('k_lo must be at least 1')
            if self.k_lo > self.k_hi:
                raise ValidationError('k_lo must not exceed k_hi')
        if self.train_slots < 0 or self.test_slots < 0:
            raise ValidationError('slot counts must be non-negative')
        if self.train_slots + self.test_slots > self.slots_per_period:
            raise ValidationError(
                'train_slots + test_slots exceeds slots_per_period'
            )
        if self.interference_radius is not None and self.interference_radius < 0:
            raise ValidationError('interference radius must be non-negative')
        if self.seed < 0:
            raise ValidationError('seed must be non-negative')

    @property
    def is_fixed_size(self):
        return self.k is not None

    @property
    def pmax(self):
        """Per-link maximum power in linear milliwatts."""
        return dbm_to_linear(self.pmax_dbm)

    @property
    def sigma2(self):
        """Noise power in linear milliwatts."""
        return dbm_to_linear(self.sigma2_dbm)


@dataclass(frozen=True, eq=False)
class Topology(object):
    """Node placements and interference mask of one period.

    adjacency[j, k] is True if the signal of transmitter j reaches receiver k.
    The diagonal (direct links) is always True.
    """
    period_id: int
    k: int
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        for arr in (self.tx_positions, self.rx_positions, self.adjacency):
            arr.setflags(write=False)

    def cross_distances(self):
        """Matrix of distances ||Tx_j - Rx_k|| between every transmitter j and
        every receiver k.

        Returns
        -------
        numpy.ndarray
        """
        diff = self.tx_positions[:, None, :] - self.rx_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)


@dataclass(frozen=True, eq=False)
class ChannelRealization(object):
    """Linear power gains of one time slot (the graph shift operator)."""
    gains: np.ndarray
    slot: int = 0
    period_id: int = 0

    def __post_init__(self):
        gains = self.gains
        if gains.ndim != 2 or gains.shape[0] != gains.shape[1]:
            raise ShapeMismatch('gain matrix must be square: ' + str(gains.shape))
        if not np.all(np.isfinite(gains)):
            raise ValidationError('gain matrix contains non-finite entries')
        if np.any(gains < 0):
            raise ValidationError('gain matrix contains negative entries')
        gains.setflags(write=False)

    @property
    def k(self):
        return self.gains.shape[0]

    @cached_property
    def spectral_norm(self):
        return float(np.linalg.norm(self.gains, 2))

    def shift_operator(self, normalization=GSO_SPECTRAL):
        """Matrix that the graph filters of a policy operate on.

        Parameters
        ----------
        normalization : string
            Either 'spectral' (divide by the largest singular value) or
            'none' (raw gains)

        Returns
        -------
        numpy.ndarray
        """
        if normalization == GSO_NONE:
            return self.gains
        elif normalization == GSO_SPECTRAL:
            norm = self.spectral_norm
            return self.gains / norm if norm > 0 else self.gains
        raise ValidationError('unknown normalization: ' + str(normalization))


@dataclass(frozen=True, eq=False)
class PeriodDataset(object):
    """Channel realizations of one period split into train and test slots.

    The realizations sequence is only ever accessed by index, through
    train_realizations() and test_realizations().
    """
    topology: Topology
    realizations: Sequence[ChannelRealization]
    train_idx: Tuple[int, ...]
    test_idx: Tuple[int, ...]

    def __post_init__(self):
        if set(self.train_idx) & set(self.test_idx):
            raise ValidationError('train and test slots overlap')
        n = len(self.realizations)
        for idx in list(self.train_idx) + list(self.test_idx):
            if not 0 <= idx < n:
                raise ValidationError('slot index out of range: ' + str(idx))

    @property
    def period_id(self):
        return self.topology.period_id

    @property
    def k(self):
        return self.topology.k

    def train_realizations(self, budget=None):
        """Realizations of the training slots (D^tr), optionally truncated to
        the first `budget` slots.

        Parameters
        ----------
        budget : int, optional
            Maximum number of slots to return

        Returns
        -------
        list(ChannelRealization)
        """
        indices = self.train_idx if budget is None else self.train_idx[:max(budget, 0)]
        return [self.realizations[i] for i in indices]

    def test_realizations(self):
        return [self.realizations[i] for i in self.test_idx]


# ------------------------------------------------------------------------------
#
# Operations
#
# ------------------------------------------------------------------------------

def dbm_to_linear(x):
    """Convert power in dBm to linear milliwatts."""
    return 10.0 ** (x / 10.0)


def draw_topology(cfg, period_id, rng):
    """Drop the transmitter/receiver pairs of one period.

    Transmitter k is placed uniformly in [-K, K]^2 and its receiver uniformly
    in the square of half-width K/4 around it. A receiver k is exposed to
    transmitter j if j == k or their distance is within the interference
    radius.

    The adjacency is directional: adjacency[j, k] compares ||Tx_j - Rx_k||,
    which in general differs from ||Tx_k - Rx_j||, so the mask is not
    symmetric when a radius is set. Without a radius it is all True.

    Parameters
    ----------
    cfg : SimConfig
        Simulation parameters
    period_id : int
        Identifier of the period
    rng : RngStream
        Fresh child stream for this period

    Returns
    -------
    Topology
    """
    if cfg.is_fixed_size:
        k = int(cfg.k)
    else:
        k = int(rng.integers(cfg.k_lo, cfg.k_hi))
    tx = rng.uniform(-k, k, size=(k, 2))
    rx = tx + rng.uniform(-k / 4.0, k / 4.0, size=(k, 2))
    if cfg.interference_radius is None:
        adjacency = np.ones((k, k), dtype=bool)
    else:
        diff = tx[:, None, :] - rx[None, :, :]
        adjacency = np.linalg.norm(diff, axis=-1) <= cfg.interference_radius
        np.fill_diagonal(adjacency, True)
    return Topology(
        period_id=period_id,
        k=k,
        tx_positions=tx,
        rx_positions=rx,
        adjacency=adjacency
    )


def pathloss_matrix(t, gamma):
    """Path-loss gains ||Tx_j - Rx_k||^-gamma for every connected pair.

    Raises DegenerateGeometry if a connected transmitter and receiver share
    the same location.

    Parameters
    ----------
    t : Topology
        Node placements
    gamma : float
        Path-loss exponent

    Returns
    -------
    numpy.ndarray
    """
    dist = t.cross_distances()
    if np.any(dist[t.adjacency] == 0):
        raise DegenerateGeometry(
            'coincident transmitter and receiver in period ' + str(t.period_id)
        )
    pathloss = np.zeros((t.k, t.k))
    pathloss[t.adjacency] = dist[t.adjacency] ** (-gamma)
    return pathloss


def draw_fading(k, rng):
    """Magnitudes |h_f| of i.i.d. Rayleigh(1) fast fading for a K x K channel.
    Zero draws are resampled so that every entry is strictly positive.
    """
    fading = rng.rayleigh(1.0, size=(k, k))
    zero = fading <= 0
    while np.any(zero):
        fading[zero] = rng.rayleigh(1.0, size=int(zero.sum()))
        zero = fading <= 0
    return fading


def realize_channel(t, pathloss, fading, slot):
    """Combine path-loss and fading into the gain matrix g = h_p^2 |h_f|^2.

    Parameters
    ----------
    t : Topology
        Topology of the period
    pathloss : numpy.ndarray
        Path-loss gains h_p (zero for masked pairs)
    fading : numpy.ndarray
        Fading magnitudes |h_f|
    slot : int
        Index of the time slot

    Returns
    -------
    ChannelRealization
    """
    shape = (t.k, t.k)
    if pathloss.shape != shape or fading.shape != shape:
        raise ShapeMismatch(
            'expected {} matrices, got {} and {}'.format(shape, pathloss.shape, fading.shape)
        )
    gains = np.square(pathloss) * np.square(fading)
    return ChannelRealization(gains=gains, slot=slot, period_id=t.period_id)


def generate_period(cfg, period_id, rng):
    """Generate the dataset of one period: one topology and one fading draw
    per slot. The first train_slots slots form D^tr, the next test_slots form
    D^te.

    Parameters
    ----------
    cfg : SimConfig
        Simulation parameters
    period_id : int
        Identifier of the period
    rng : RngStream
        Child stream that belongs to this period

    Returns
    -------
    PeriodDataset
    """
    topology = draw_topology(cfg, period_id, rng.child('topology'))
    pathloss = pathloss_matrix(topology, cfg.gamma)
    fading_rng = rng.child('fading')
    realizations = [
        realize_channel(topology, pathloss, draw_fading(topology.k, fading_rng), slot)
            for slot in range(cfg.slots_per_period)
    ]
    train_idx = tuple(range(cfg.train_slots))
    test_idx = tuple(range(cfg.train_slots, cfg.train_slots + cfg.test_slots))
    logger.debug('period %d: %d links', period_id, topology.k)
    return PeriodDataset(
        topology=topology,
        realizations=realizations,
        train_idx=train_idx,
        test_idx=test_idx
    )


def generate_meta_dataset(cfg, n_periods, rng):
    """Generate n_periods independent periods. Period i draws from the child
    stream labeled 'period-i'.

    Returns
    -------
    list(PeriodDataset)
    """
    if n_periods < 1:
        raise ValidationError('number of periods must be at least 1')
    return [
        generate_period(cfg, period_id, rng.child('period-' + str(period_id)))
            for period_id in range(n_periods)
    ]
