"""Reference power allocations that need no training.

Full power and uniformly random power bound the learned policies from
below; the weighted minimum mean square error (WMMSE) algorithm is the
classical iterative optimizer of the sum-rate for the single-antenna
interference channel and serves as a strong model-based reference.
"""

from __future__ import annotations

import logging

import numpy as np

from metapower.errors import ValidationError
from metapower.regnn import _as_stack, sum_rate


logger = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
#
# Constants
#
# ------------------------------------------------------------------------------

BASELINE_FULL_POWER = 'full-power'
BASELINE_RANDOM_POWER = 'random-power'
BASELINE_WMMSE = 'wmmse'

BASELINES = [BASELINE_FULL_POWER, BASELINE_RANDOM_POWER, BASELINE_WMMSE]


# ------------------------------------------------------------------------------
#
# Power allocations
#
# ------------------------------------------------------------------------------

def _pmax_vector(pmax, shape):
    return np.broadcast_to(np.asarray(pmax, dtype=float), shape)


def full_power(g, pmax):
    """Every link transmits at maximum power."""
    gains, batched = _as_stack(g, attr='gains')
    p = _pmax_vector(pmax, gains.shape[:2]).copy()
    return p if batched else p[0]


def random_power(g, pmax, rng):
    """Powers drawn i.i.d. uniform on [0, pmax] per link."""
    gains, batched = _as_stack(g, attr='gains')
    p = rng.uniform(0.0, 1.0, size=gains.shape[:2]) * _pmax_vector(pmax, gains.shape[:2])
    return p if batched else p[0]


def wmmse_power(g, pmax, sigma2, iterations=100):
    """WMMSE power allocation, started at full power.

    Entry (j, k) of the gain matrix is the power gain from transmitter j to
    receiver k; the algorithm works on the amplitudes sqrt(g) and keeps the
    transmit amplitude v_k in [0, sqrt(pmax)].

    Parameters
    ----------
    g : numpy.ndarray or netsim.ChannelRealization
        Gain matrix (K x K) or stack of gain matrices (B x K x K)
    pmax : float
        Maximum transmit power (linear mW)
    sigma2 : float
        Noise power (linear mW)
    iterations : int, optional
        Number of block coordinate updates

    Returns
    -------
    numpy.ndarray
        Power allocation v^2
    """
    if iterations < 0:
        raise ValidationError('number of iterations must be non-negative')
    gains, batched = _as_stack(g, attr='gains')
    direct = np.sqrt(np.einsum('bkk->bk', gains))
    vmax = np.sqrt(_pmax_vector(pmax, gains.shape[:2]))
    v = vmax.copy()

    def receivers(v):
        received = np.einsum('bjk,bj->bk', gains, np.square(v)) + sigma2
        u = direct * v / received
        w = 1.0 / (1.0 - u * direct * v)
        return u, w

    u, w = receivers(v)
    for _ in range(iterations):
        numerator = w * u * direct
        denominator = np.einsum('bkj,bj->bk', gains, w * np.square(u))
        v = np.where(denominator > 0, numerator / np.where(denominator > 0, denominator, 1.0), vmax)
        v = np.clip(v, 0.0, vmax)
        u, w = receivers(v)
    p = np.square(v)
    return p if batched else p[0]


def evaluate_baseline(name, dataset, pmax, sigma2, rng=None):
    """Mean sum-rate of a baseline over the test slots of a period.

    Parameters
    ----------
    name : string
        One of BASELINES
    dataset : netsim.PeriodDataset
        Period whose test slots are evaluated
    pmax : float
        Maximum transmit power (linear mW)
    sigma2 : float
        Noise power (linear mW)
    rng : netsim.RngStream, optional
        Stream for the random baseline

    Returns
    -------
    float
    """
    realizations = dataset.test_realizations()
    if not realizations:
        return 0.0
    gains = np.stack([g.gains for g in realizations])
    if name == BASELINE_FULL_POWER:
        p = full_power(gains, pmax)
    elif name == BASELINE_RANDOM_POWER:
        if rng is None:
            raise ValidationError('random baseline needs a random stream')
        p = random_power(gains, pmax, rng)
    elif name == BASELINE_WMMSE:
        p = wmmse_power(gains, pmax, sigma2)
    else:
        raise ValidationError('unknown baseline: ' + str(name))
    return float(np.mean(sum_rate(gains, p, sigma2)))
