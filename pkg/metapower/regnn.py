"""Random edge graph neural network (REGNN) power control policy.

The policy is a stack of L graph filters. Layer l filters the output of the
previous layer with the polynomial sum_{n=1..N} phi_{l,n} G^n, where G is the
channel gain matrix of the current slot. Hidden layers apply a ReLU, the last
layer applies a sigmoid and scales by the maximum transmit power, so that the
output is a feasible power allocation.

The module implements the forward pass, the sum-rate objective, and exact
reverse-mode gradients of the objective with respect to the filter taps. All
functions accept either a single K x K channel or a stack of B channels with
shape B x K x K; for stacks, gradients are summed over the slots.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import List, Optional

import numpy as np

from metapower.errors import (
    EmptyBatch, InvalidPermutation, ShapeMismatch, TraceMismatch, ValidationError
)
from metapower.netsim import ChannelRealization, GSO_NORMALIZATIONS, GSO_SPECTRAL


# ------------------------------------------------------------------------------
#
# Constants
#
# ------------------------------------------------------------------------------

OPTIMIZER_GD = 'gd'
OPTIMIZER_ADAM = 'adam'

OPTIMIZERS = [OPTIMIZER_GD, OPTIMIZER_ADAM]

LN2 = math.log(2.0)


# ------------------------------------------------------------------------------
#
# Domain types
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReGnnParams(object):
    """Trainable filter taps of a REGNN.

    Attributes
    ----------
    taps : numpy.ndarray
        L x N matrix; row l holds the taps phi_{l,1..N} of layer l
    pmax : float
        Maximum transmit power of every link (linear mW)
    """
    taps: np.ndarray
    pmax: float

    def __post_init__(self):
        if self.taps.ndim != 2 or self.taps.shape[0] < 1 or self.taps.shape[1] < 1:
            raise ShapeMismatch('filter taps must be a non-empty L x N matrix')
        if not np.all(np.isfinite(self.taps)):
            raise ValidationError('filter taps must be finite')
        if not np.all(np.asarray(self.pmax) > 0):
            raise ValidationError('maximum power must be positive')
        self.taps.setflags(write=False)

    @property
    def layers(self):
        return self.taps.shape[0]

    @property
    def n_taps(self):
        return self.taps.shape[1]

    def replace_taps(self, taps):
        return ReGnnParams(taps=np.array(taps, dtype=float), pmax=self.pmax)


@dataclass(frozen=True, eq=False)
class SlotBatch(object):
    """Stack of B channel realizations with the same number of links.

    gains holds the raw gains that the objective uses, gso the (normalized)
    shift operator that the policy filters with.
    """
    gains: np.ndarray
    gso: np.ndarray

    def __len__(self):
        return self.gains.shape[0]

    @property
    def k(self):
        return self.gains.shape[1]


@dataclass(frozen=True, eq=False)
class ForwardTrace(object):
    """Intermediate values of a forward pass needed for backpropagation.

    For every layer l the trace holds the layer input z_{l-1}, the shifted
    signals G^n z_{l-1} (n = 1..N) and the pre-activation u_l. Arrays are
    always batched (leading slot axis).
    """
    taps: np.ndarray
    gso: np.ndarray
    inputs: List[np.ndarray]
    shifted: List[np.ndarray]
    pre_activations: List[np.ndarray]
    pmax: object
    batched: bool


@dataclass
class OptimizerState(object):
    """State of a gradient ascent optimizer for one parameter array.

    The adaptive-moment method keeps first and second moment estimates and
    a step counter; plain gradient ascent only uses the step size.
    """
    method: str = OPTIMIZER_ADAM
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.method not in OPTIMIZERS:
            raise ValidationError('unknown optimizer: ' + str(self.method))
        if not self.lr > 0:
            raise ValidationError('step size must be positive')

    def ascend(self, values, grad):
        """Return values moved one step along the ascent direction of grad.

        Parameters
        ----------
        values : numpy.ndarray
            Current parameter values
        grad : numpy.ndarray
            Gradient of the objective that is maximized

        Returns
        -------
        numpy.ndarray
        """
        if values.shape != grad.shape:
            raise ShapeMismatch(
                'gradient shape {} does not match {}'.format(grad.shape, values.shape)
            )
        if self.method == OPTIMIZER_GD:
            return values + self.lr * grad
        if self.m is None:
            self.m = np.zeros_like(values)
            self.v = np.zeros_like(values)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * np.square(grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return values + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ------------------------------------------------------------------------------
#
# Initialization and batching
#
# ------------------------------------------------------------------------------

def init_taps(rows, n_taps, rng):
    """Draw a rows x N matrix of taps i.i.d. uniform on [-1/sqrt(N), 1/sqrt(N)]."""
    bound = 1.0 / math.sqrt(n_taps)
    return rng.uniform(-bound, bound, size=(rows, n_taps))


def init_params(layers, n_taps, pmax, rng):
    """Random initial REGNN parameters.

    Parameters
    ----------
    layers : int
        Number of filter layers L
    n_taps : int
        Number of taps N per filter
    pmax : float
        Maximum transmit power (linear mW)
    rng : netsim.RngStream
        Stream for the draw

    Returns
    -------
    ReGnnParams
    """
    return ReGnnParams(taps=init_taps(layers, n_taps, rng), pmax=pmax)


def stack_realizations(realizations, normalization=GSO_SPECTRAL):
    """Group channel realizations by link count into slot batches. Groups
    appear in the order of their first realization.

    Parameters
    ----------
    realizations : list(netsim.ChannelRealization)
        Channel realizations, possibly of different sizes
    normalization : string
        Shift operator normalization

    Returns
    -------
    list(SlotBatch)
    """
    groups = dict()
    for g in realizations:
        groups.setdefault(g.k, []).append(g)
    return [
        SlotBatch(
            gains=np.stack([g.gains for g in group]),
            gso=np.stack([g.shift_operator(normalization) for g in group])
        )
            for group in groups.values()
    ]


def as_slot_batches(batch, normalization=GSO_SPECTRAL):
    """Normalize the different batch representations to a list of SlotBatch.

    Raises EmptyBatch if the batch does not contain a single slot.
    """
    if isinstance(batch, SlotBatch):
        batches = [batch]
    elif isinstance(batch, ChannelRealization):
        batches = stack_realizations([batch], normalization)
    else:
        items = list(batch)
        if items and all(isinstance(item, SlotBatch) for item in items):
            batches = items
        else:
            batches = stack_realizations(items, normalization)
    batches = [b for b in batches if len(b) > 0]
    if not batches:
        raise EmptyBatch('batch contains no channel realizations')
    return batches


def _as_stack(g, attr='gso', normalization=GSO_SPECTRAL):
    """Get (B x K x K array, batched flag) for a channel argument. Channel
    realizations give their shift operator, or the raw gains for
    attr='gains'.
    """
    if isinstance(g, ChannelRealization):
        arr = g.gains if attr == 'gains' else g.shift_operator(normalization)
    elif isinstance(g, SlotBatch):
        arr = getattr(g, attr)
    else:
        arr = np.asarray(g, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return arr[None, :, :], False
    if arr.ndim == 3 and arr.shape[1] == arr.shape[2]:
        return arr, True
    raise ShapeMismatch('channel must be K x K or B x K x K: ' + str(arr.shape))


def _as_signal(x, shape):
    """Broadcast a node signal to the batch shape (B, K)."""
    if x is None:
        return np.ones(shape)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != shape[-1] or x.ndim > 2:
        raise ShapeMismatch(
            'signal of shape {} does not match {} links'.format(x.shape, shape[-1])
        )
    return np.broadcast_to(x, shape).copy()


# ------------------------------------------------------------------------------
#
# Graph filters and forward pass
#
# ------------------------------------------------------------------------------

def shift(gso, z):
    """Apply the shift operator G z to a batch of signals."""
    return np.einsum('bjk,bk->bj', gso, z)


def shift_adjoint(gso, z):
    """Apply the transposed shift operator G^T z to a batch of signals."""
    return np.einsum('bjk,bj->bk', gso, z)


def shifted_signals(gso, z, n_taps):
    """Compute G z, G^2 z, ..., G^N z by repeated multiplication.

    Returns
    -------
    numpy.ndarray
        Array of shape N x B x K
    """
    out = np.empty((n_taps,) + z.shape)
    y = z
    for n in range(n_taps):
        y = shift(gso, y)
        out[n] = y
    return out


def adjoint_filter(gso, coeffs):
    """Compute sum_n (G^T)^n c_n for coefficient signals c_1..c_N (Horner
    scheme, N x B x K input).
    """
    acc = np.zeros(coeffs.shape[1:])
    for n in reversed(range(coeffs.shape[0])):
        acc = shift_adjoint(gso, acc + coeffs[n])
    return acc


def graph_filter(taps, g, x, normalization=GSO_SPECTRAL):
    """Apply the graph filter sum_{n=1..N} phi_n G^n x.

    Parameters
    ----------
    taps : numpy.ndarray
        Filter taps phi_1..phi_N
    g : numpy.ndarray or netsim.ChannelRealization
        K x K shift operator (or a B x K x K stack)
    x : numpy.ndarray
        Graph signal of length K (or B x K)
    normalization : string, optional
        Shift operator normalization for channel realizations

    Returns
    -------
    numpy.ndarray
    """
    gso, batched = _as_stack(g, normalization=normalization)
    taps = np.asarray(taps, dtype=float)
    z = _as_signal(x, gso.shape[:2])
    y = np.tensordot(taps, shifted_signals(gso, z, taps.shape[0]), axes=1)
    return y if batched else y[0]


def relu(u):
    return np.maximum(u, 0.0)


def sigmoid(u):
    """Numerically stable logistic function."""
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def regnn_forward(params, g, x=None, normalization=GSO_SPECTRAL):
    """Forward pass of the REGNN.

    Parameters
    ----------
    params : ReGnnParams
        Filter taps and maximum power
    g : numpy.ndarray or netsim.ChannelRealization
        Shift operator of one slot (K x K) or of a batch (B x K x K)
    x : numpy.ndarray, optional
        Input signal; defaults to the all-ones vector
    normalization : string, optional
        Shift operator normalization for channel realizations; arrays are
        used as given

    Returns
    -------
    (numpy.ndarray, ForwardTrace)
        Power allocation and the trace for regnn_backward
    """
    gso, batched = _as_stack(g, normalization=normalization)
    z = _as_signal(x, gso.shape[:2])
    inputs, shifted, pre = [], [], []
    for l in range(params.layers):
        powers = shifted_signals(gso, z, params.n_taps)
        u = np.tensordot(params.taps[l], powers, axes=1)
        inputs.append(z)
        shifted.append(powers)
        pre.append(u)
        if l < params.layers - 1:
            z = relu(u)
    p = params.pmax * sigmoid(pre[-1])
    trace = ForwardTrace(
        taps=params.taps,
        gso=gso,
        inputs=inputs,
        shifted=shifted,
        pre_activations=pre,
        pmax=params.pmax,
        batched=batched
    )
    return (p if batched else p[0]), trace


def regnn_backward(params, g, trace, grad_p, normalization=GSO_SPECTRAL):
    """Reverse-mode gradient of an objective with respect to the filter taps,
    given the gradient grad_p of the objective with respect to the powers.

    The ReLU subgradient at zero is zero. For a batch of slots the gradients
    of all slots are summed.

    Parameters
    ----------
    params : ReGnnParams
        Parameters used in the forward pass
    g : numpy.ndarray or netsim.ChannelRealization
        Shift operator used in the forward pass
    trace : ForwardTrace
        Trace returned by regnn_forward
    grad_p : numpy.ndarray
        Gradient with respect to the power allocation

    Returns
    -------
    numpy.ndarray
        L x N matrix of gradients
    """
    gso, _ = _as_stack(g, normalization=normalization)
    if trace.taps.shape != params.taps.shape or not np.array_equal(trace.taps, params.taps):
        raise TraceMismatch('trace was computed for different parameters')
    if gso.shape != trace.gso.shape:
        raise TraceMismatch('trace was computed for a different channel')
    grad_p = np.asarray(grad_p, dtype=float).reshape(trace.pre_activations[-1].shape)
    per_slot = np.zeros((gso.shape[0],) + params.taps.shape)
    s = sigmoid(trace.pre_activations[-1])
    upstream = grad_p * trace.pmax * s * (1.0 - s)
    for l in reversed(range(params.layers)):
        per_slot[:, l, :] = np.einsum('bk,nbk->bn', upstream, trace.shifted[l])
        if l == 0:
            break
        coeffs = params.taps[l][:, None, None] * upstream[None, :, :]
        upstream = adjoint_filter(gso, coeffs) * (trace.pre_activations[l - 1] > 0)
    return per_slot.sum(axis=0)


# ------------------------------------------------------------------------------
#
# Objective
#
# ------------------------------------------------------------------------------

def _rate_terms(g, p, sigma2):
    gains, batched = _as_stack(g, attr='gains')
    p = np.asarray(p, dtype=float).reshape(gains.shape[:2])
    signal = np.einsum('bkk->bk', gains) * p
    off_diagonal = gains * (1.0 - np.eye(gains.shape[1]))
    noise_plus_interference = sigma2 + np.einsum('bjk,bj->bk', off_diagonal, p)
    return gains, off_diagonal, signal, noise_plus_interference, batched


def sum_rate(g, p, sigma2):
    """Sum of log2(1 + SINR_k) over all links.

    Parameters
    ----------
    g : numpy.ndarray or netsim.ChannelRealization
        Raw channel gains of one slot (or a B x K x K stack)
    p : numpy.ndarray
        Power allocation
    sigma2 : float
        Noise power (linear mW)

    Returns
    -------
    float or numpy.ndarray
        Sum-rate in bits per channel use (one value per slot for stacks)
    """
    _, _, signal, npi, batched = _rate_terms(g, p, sigma2)
    rates = np.sum(np.log2(1.0 + signal / npi), axis=1)
    return rates if batched else float(rates[0])


def sum_rate_grad_p(g, p, sigma2):
    """Exact gradient of sum_rate with respect to the powers."""
    gains, off_diagonal, signal, npi, batched = _rate_terms(g, p, sigma2)
    total = npi + signal
    own = np.einsum('bjk,bk->bj', gains, 1.0 / (LN2 * total))
    cross = np.einsum('bjk,bk->bj', off_diagonal, 1.0 / (LN2 * npi))
    grad = own - cross
    return grad if batched else grad[0]


def batch_objective_and_grad(params, batch, sigma2, normalization=GSO_SPECTRAL):
    """Mean sum-rate over a batch of slots and its gradient with respect to
    the filter taps.

    Parameters
    ----------
    params : ReGnnParams
        Policy parameters
    batch : list(netsim.ChannelRealization) or SlotBatch or list(SlotBatch)
        Non-empty batch of slots
    sigma2 : float
        Noise power (linear mW)
    normalization : string
        Shift operator normalization for realizations that are not yet stacked

    Returns
    -------
    (float, numpy.ndarray)
    """
    total, count = 0.0, 0
    grads = np.zeros(params.taps.shape)
    for sb in as_slot_batches(batch, normalization):
        p, trace = regnn_forward(params, sb.gso)
        rates = sum_rate(sb.gains, p, sigma2)
        grads += regnn_backward(params, sb.gso, trace, sum_rate_grad_p(sb.gains, p, sigma2))
        total += float(rates.sum())
        count += len(sb)
    return total / count, grads / count


def batch_objective(params, batch, sigma2, normalization=GSO_SPECTRAL):
    """Mean sum-rate over a batch of slots (no gradient)."""
    total, count = 0.0, 0
    for sb in as_slot_batches(batch, normalization):
        p, _ = regnn_forward(params, sb.gso)
        total += float(sum_rate(sb.gains, p, sigma2).sum())
        count += len(sb)
    return total / count


def optimizer_step(state, params, grads):
    """Gradient ascent step on the filter taps.

    Parameters
    ----------
    state : OptimizerState
        Optimizer state (updated in place)
    params : ReGnnParams
        Current parameters
    grads : numpy.ndarray
        Gradient of the objective

    Returns
    -------
    ReGnnParams
    """
    return params.replace_taps(state.ascend(params.taps, np.asarray(grads, dtype=float)))


# ------------------------------------------------------------------------------
#
# Permutations
#
# ------------------------------------------------------------------------------

def check_permutation(perm, k):
    perm = np.asarray(perm)
    if perm.shape != (k,) or not np.array_equal(np.sort(perm), np.arange(k)):
        raise InvalidPermutation('not a permutation of {} links: {}'.format(k, perm))
    return perm


def permute_channel(g, perm):
    """Relabel the links of a channel realization: entry (i, j) of the result
    is entry (perm[i], perm[j]) of the input.

    Returns
    -------
    netsim.ChannelRealization
    """
    perm = check_permutation(perm, g.k)
    return ChannelRealization(
        gains=g.gains[np.ix_(perm, perm)].copy(),
        slot=g.slot,
        period_id=g.period_id
    )


# ------------------------------------------------------------------------------
#
# Policy configuration
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyConfig(object):
    """Architecture of the REGNN and the channel constants its objective
    depends on.

    Attributes
    ----------
    layers : int
        Number of filter layers L (the last one is the sigmoid output layer)
    n_taps : int
        Filter taps N per layer
    pmax : float
        Maximum transmit power (linear mW)
    sigma2 : float
        Noise power (linear mW)
    normalization : string
        Shift operator normalization ('spectral' or 'none')
    batch_size : int
        Mini-batch size of pooled training
    """
    layers: int = 2
    n_taps: int = 4
    pmax: float = 10.0 ** -3.5
    sigma2: float = 1e-7
    normalization: str = GSO_SPECTRAL
    batch_size: int = 64

    def __post_init__(self):
        if self.layers < 1 or self.n_taps < 1:
            raise ValidationError('policy needs at least one layer and one tap')
        if not (self.pmax > 0 and self.sigma2 > 0):
            raise ValidationError('power constants must be positive')
        if self.normalization not in GSO_NORMALIZATIONS:
            raise ValidationError('unknown normalization: ' + str(self.normalization))
        if self.batch_size < 1:
            raise ValidationError('batch size must be at least 1')
