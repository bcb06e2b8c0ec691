"""Modular meta-learning of REGNN power control policies.

Instead of a shared initialization, modular meta-learning trains a repository
of M graph filters (modules). A policy for a period is composed by assigning
one module to each of the L layers. Assignments are sampled from a
categorical distribution per layer whose logits eta are adapted with
gradient ascent on the training slots of a period. Gradients flow through the
discrete choice by the Gumbel-softmax (concrete) relaxation: the hard choice
argmax(eta + eps) is replaced by softmax((eta + eps) / lambda), and each
layer output becomes the convex mixture of the activated module outputs.

During meta-training, logits are adapted on D^tr of every period and the
module repository is updated on D^te. At runtime the repository is frozen and
only the logits of the new period are adapted; the final policy uses the
mode of the assignment distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
import itertools
import logging
import math
import time
from typing import List, Optional

import numpy as np

from metapower.errors import (
    EmptyBatch, IndexOutOfRange, SearchSpaceTooLarge, ShapeMismatch, ValidationError
)
from metapower.netsim import GSO_SPECTRAL, PeriodDataset
from metapower.regnn import (
    OPTIMIZER_ADAM, OptimizerState, ReGnnParams, adjoint_filter, as_slot_batches,
    init_taps, regnn_forward, relu, shifted_signals, sigmoid, sum_rate,
    sum_rate_grad_p, _as_signal, _as_stack
)


logger = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
#
# Domain types
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModuleSet(object):
    """Repository of M graph filters that can be used at any layer.

    Attributes
    ----------
    modules : numpy.ndarray
        M x N matrix; row i holds the taps of module i
    pmax : float
        Maximum transmit power (linear mW)
    """
    modules: np.ndarray
    pmax: float

    def __post_init__(self):
        if self.modules.ndim != 2 or self.modules.shape[0] < 1 or self.modules.shape[1] < 1:
            raise ShapeMismatch('module set must be a non-empty M x N matrix')
        if not np.all(np.isfinite(self.modules)):
            raise ValidationError('module taps must be finite')
        self.modules.setflags(write=False)

    @property
    def size(self):
        return self.modules.shape[0]

    @property
    def n_taps(self):
        return self.modules.shape[1]

    def replace_modules(self, modules):
        return ModuleSet(modules=np.array(modules, dtype=float), pmax=self.pmax)


@dataclass(frozen=True)
class TemperatureSchedule(object):
    """Geometric annealing of the relaxation temperature towards a floor."""
    lambda0: float = 1.0
    decay: float = math.exp(-0.025)
    lambda_min: float = 0.5

    def __post_init__(self):
        if not self.lambda_min > 0:
            raise ValidationError('minimum temperature must be positive')
        if self.lambda0 < self.lambda_min:
            raise ValidationError('initial temperature is below the minimum')
        if not 0 < self.decay <= 1:
            raise ValidationError('decay factor must be in (0, 1]')

    def value(self, epoch):
        return max(self.lambda_min, self.lambda0 * self.decay ** epoch)

    def frozen_at(self, epoch):
        """Constant schedule at the temperature of the given epoch."""
        value = self.value(epoch)
        return TemperatureSchedule(lambda0=value, decay=1.0, lambda_min=value)


@dataclass(frozen=True)
class ModularConfig(object):
    """Hyperparameters of modular meta-training and runtime adaptation."""
    modules: int = 6
    iterations: int = 200
    inner_steps: int = 2
    outer_steps: int = 5
    gamma: float = 1e-4
    delta: float = 1e-4
    meta_batch: Optional[int] = None
    schedule: TemperatureSchedule = TemperatureSchedule()
    search_cap: int = 4096

    def __post_init__(self):
        if self.modules < 1:
            raise ValidationError('number of modules must be at least 1')
        if self.iterations < 0 or self.inner_steps < 0 or self.outer_steps < 0:
            raise ValidationError('iteration counts must be non-negative')
        if not (self.gamma > 0 and self.delta > 0):
            raise ValidationError('step sizes must be positive')
        if self.meta_batch is not None and self.meta_batch < 1:
            raise ValidationError('meta batch must contain at least one period')


@dataclass(frozen=True, eq=False)
class ModularTrace(object):
    """Intermediate values of a soft modular forward pass (batched)."""
    gso: np.ndarray
    shifted: List[np.ndarray]
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]
    s_tilde: np.ndarray
    pmax: object
    batched: bool


# ------------------------------------------------------------------------------
#
# Gumbel-softmax sampling
#
# ------------------------------------------------------------------------------

def init_modules(m, n_taps, pmax, rng):
    """Random module set; every module drawn like a REGNN layer."""
    return ModuleSet(modules=init_taps(m, n_taps, rng), pmax=pmax)


def gumbel_noise(l, m, rng):
    """L x M matrix of i.i.d. standard Gumbel variables -log(-log(u))."""
    u = rng.uniform(0.0, 1.0, size=(l, m))
    zero = u <= 0
    while np.any(zero):
        u[zero] = rng.uniform(0.0, 1.0, size=int(zero.sum()))
        zero = u <= 0
    return -np.log(-np.log(u))


def _check_shapes(eta, eps):
    eta = np.asarray(eta, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eta.ndim != 2 or eta.shape != eps.shape:
        raise ShapeMismatch(
            'logits {} and noise {} must be equal L x M matrices'.format(eta.shape, eps.shape)
        )
    return eta, eps


def sample_hard(eta, eps):
    """Gumbel-max sample: argmax_i (eta_l + eps_l) per layer (lowest index on
    ties).

    Returns
    -------
    tuple(int)
    """
    eta, eps = _check_shapes(eta, eps)
    return tuple(int(i) for i in np.argmax(eta + eps, axis=1))


def softmax_rows(a):
    a = a - np.max(a, axis=1, keepdims=True)
    e = np.exp(a)
    return e / np.sum(e, axis=1, keepdims=True)


def sample_soft(eta, eps, lam):
    """Concrete sample softmax((eta_l + eps_l) / lambda) per layer.

    Returns
    -------
    numpy.ndarray
        Row-stochastic L x M matrix
    """
    eta, eps = _check_shapes(eta, eps)
    if not lam > 0:
        raise ValidationError('temperature must be positive')
    return softmax_rows((eta + eps) / lam)


def select_mode(eta):
    """Most likely assignment argmax_i eta_l per layer (lowest index on
    ties)."""
    return tuple(int(i) for i in np.argmax(np.asarray(eta, dtype=float), axis=1))


def row_entropy(eta):
    """Mean entropy (nats) of the assignment distributions softmax(eta_l)."""
    probs = softmax_rows(np.asarray(eta, dtype=float))
    logs = np.log(np.where(probs > 0, probs, 1.0))
    return float(np.mean(-np.sum(probs * logs, axis=1)))


# ------------------------------------------------------------------------------
#
# Forward passes
#
# ------------------------------------------------------------------------------

def assemble(mods, s):
    """REGNN parameters whose layer l uses module s[l]."""
    s = list(s)
    if not s:
        raise ShapeMismatch('assignment must cover at least one layer')
    for idx in s:
        if not 0 <= idx < mods.size:
            raise IndexOutOfRange(
                'module {} not in repository of size {}'.format(idx, mods.size)
            )
    return ReGnnParams(taps=mods.modules[s].copy(), pmax=mods.pmax)


def modular_forward_hard(mods, s, g, x=None, normalization=GSO_SPECTRAL):
    """Power allocation of the REGNN composed by the hard assignment s."""
    p, _ = regnn_forward(assemble(mods, s), g, x, normalization)
    return p


def modular_forward_soft(mods, s_tilde, g, x=None, normalization=GSO_SPECTRAL):
    """Forward pass with soft assignments. Layer l outputs the mixture
    sum_i s_tilde[l, i] * sigma[H_i(z_{l-1})] of the activated module outputs;
    the last layer mixes sigmoid outputs and scales by pmax.

    Parameters
    ----------
    mods : ModuleSet
        Module repository
    s_tilde : numpy.ndarray
        Row-stochastic L x M assignment weights
    g : numpy.ndarray or netsim.ChannelRealization
        Shift operator (K x K or B x K x K)
    x : numpy.ndarray, optional
        Input signal (all ones by default)
    normalization : string, optional
        Shift operator normalization for channel realizations

    Returns
    -------
    (numpy.ndarray, ModularTrace)
    """
    s_tilde = np.asarray(s_tilde, dtype=float)
    if s_tilde.ndim != 2 or s_tilde.shape[1] != mods.size:
        raise ShapeMismatch(
            'soft assignment {} does not match {} modules'.format(s_tilde.shape, mods.size)
        )
    gso, batched = _as_stack(g, normalization=normalization)
    z = _as_signal(x, gso.shape[:2])
    layers = s_tilde.shape[0]
    shifted, pre, acts = [], [], []
    for l in range(layers):
        powers = shifted_signals(gso, z, mods.n_taps)
        u = np.tensordot(mods.modules, powers, axes=1)
        a = relu(u) if l < layers - 1 else sigmoid(u)
        z = np.tensordot(s_tilde[l], a, axes=1)
        shifted.append(powers)
        pre.append(u)
        acts.append(a)
    p = mods.pmax * z
    trace = ModularTrace(
        gso=gso,
        shifted=shifted,
        pre_activations=pre,
        activations=acts,
        s_tilde=s_tilde,
        pmax=mods.pmax,
        batched=batched
    )
    return (p if batched else p[0]), trace


def modular_backward_soft(mods, trace, grad_p):
    """Gradients of an objective with respect to the module taps and the
    soft assignment weights, summed over the slots of the trace.

    Returns
    -------
    (numpy.ndarray, numpy.ndarray)
        M x N module gradients and L x M assignment weight gradients
    """
    layers = trace.s_tilde.shape[0]
    grad_p = np.asarray(grad_p, dtype=float).reshape(trace.gso.shape[:2])
    grad_modules = np.zeros(mods.modules.shape)
    grad_s = np.zeros(trace.s_tilde.shape)
    upstream = grad_p * trace.pmax
    for l in reversed(range(layers)):
        a = trace.activations[l]
        grad_s[l] = np.einsum('bk,mbk->m', upstream, a)
        if l == layers - 1:
            local = a * (1.0 - a)
        else:
            local = (trace.pre_activations[l] > 0).astype(float)
        grad_u = trace.s_tilde[l][:, None, None] * upstream[None, :, :] * local
        grad_modules += np.einsum('mbk,nbk->mn', grad_u, trace.shifted[l])
        if l > 0:
            coeffs = np.einsum('mn,mbk->nbk', mods.modules, grad_u)
            upstream = adjoint_filter(trace.gso, coeffs)
    return grad_modules, grad_s


def soft_objective_and_grads(mods, s_tilde, batch, sigma2, normalization=GSO_SPECTRAL):
    """Mean sum-rate of the soft modular policy over a batch of slots, with
    gradients with respect to the module taps and the assignment weights.

    Returns
    -------
    (float, numpy.ndarray, numpy.ndarray)
    """
    total, count = 0.0, 0
    grad_modules = np.zeros(mods.modules.shape)
    grad_s = np.zeros(np.shape(s_tilde))
    for sb in as_slot_batches(batch, normalization):
        p, trace = modular_forward_soft(mods, s_tilde, sb.gso)
        gm, gs = modular_backward_soft(mods, trace, sum_rate_grad_p(sb.gains, p, sigma2))
        grad_modules += gm
        grad_s += gs
        total += float(sum_rate(sb.gains, p, sigma2).sum())
        count += len(sb)
    return total / count, grad_modules / count, grad_s / count


def logits_objective_and_grad(mods, eta, eps, lam, batch, sigma2, normalization=GSO_SPECTRAL):
    """Relaxed objective as a function of the logits for fixed Gumbel noise,
    and its exact gradient through the softmax weights.

    Returns
    -------
    (float, numpy.ndarray)
    """
    s_tilde = sample_soft(eta, eps, lam)
    value, _, grad_s = soft_objective_and_grads(mods, s_tilde, batch, sigma2, normalization)
    centered = grad_s - np.sum(s_tilde * grad_s, axis=1, keepdims=True)
    return value, s_tilde * centered / lam


def hard_objective(mods, s, batch, sigma2, normalization=GSO_SPECTRAL):
    """Mean sum-rate of the REGNN composed by assignment s."""
    params = assemble(mods, s)
    total, count = 0.0, 0
    for sb in as_slot_batches(batch, normalization):
        p, _ = regnn_forward(params, sb.gso)
        total += float(sum_rate(sb.gains, p, sigma2).sum())
        count += len(sb)
    return total / count


# ------------------------------------------------------------------------------
#
# Adaptation and meta-training
#
# ------------------------------------------------------------------------------

def adapt_logits(
    mods, eta, train, steps, gamma, schedule, rng, sigma2,
    normalization=GSO_SPECTRAL, history=None
):
    """Adapt assignment logits by gradient ascent on the relaxed training
    objective. Every step draws a single Gumbel noise sample; the temperature
    of step t is schedule.value(t).

    Parameters
    ----------
    mods : ModuleSet
        Module repository (not modified)
    eta : numpy.ndarray
        Initial L x M logits
    train : list(netsim.ChannelRealization) or list(regnn.SlotBatch)
        Training slots
    steps : int
        Number of ascent steps
    gamma : float
        Step size
    schedule : TemperatureSchedule
        Relaxation temperature per step
    rng : netsim.RngStream
        Stream for the Gumbel noise
    sigma2 : float
        Noise power (linear mW)
    normalization : string, optional
        Shift operator normalization
    history : list, optional
        Receives (step, temperature, train_sum_rate, entropy_of_rows) tuples

    Returns
    -------
    numpy.ndarray
    """
    eta = np.array(eta, dtype=float)
    if steps <= 0:
        return eta
    batches = as_slot_batches(train, normalization)
    for step in range(steps):
        lam = schedule.value(step)
        eps = gumbel_noise(eta.shape[0], eta.shape[1], rng)
        value, grad = logits_objective_and_grad(mods, eta, eps, lam, batches, sigma2)
        if history is not None:
            history.append((step, lam, value, row_entropy(eta)))
        eta = eta + gamma * grad
    return eta


def modules_outer_step(
    mods, adapted_logits, periods, delta, rng, sigma2, temperature=1.0,
    state=None, normalization=GSO_SPECTRAL
):
    """First-order update of the module repository on the test slots of the
    given periods, with the logits of every period held fixed.

    Parameters
    ----------
    mods : ModuleSet
        Current module repository
    adapted_logits : list(numpy.ndarray)
        Adapted logits, one per period
    periods : list(netsim.PeriodDataset) or list(list(regnn.SlotBatch))
        Periods (only their test slots are used)
    delta : float
        Outer step size (used if no state is given)
    rng : netsim.RngStream
        Stream for the Gumbel noise
    sigma2 : float
        Noise power (linear mW)
    temperature : float, optional
        Relaxation temperature
    state : regnn.OptimizerState, optional
        Optimizer state that persists across outer steps

    Returns
    -------
    ModuleSet
    """
    if len(adapted_logits) != len(periods):
        raise ShapeMismatch('expected one set of logits per period')
    if not periods:
        raise EmptyBatch('no periods for the module update')
    if state is None:
        state = OptimizerState(method=OPTIMIZER_ADAM, lr=delta)
    grads = np.zeros(mods.modules.shape)
    for i, (eta, period) in enumerate(zip(adapted_logits, periods)):
        if isinstance(period, PeriodDataset):
            batch = period.test_realizations()
        else:
            batch = period
        eps = gumbel_noise(eta.shape[0], eta.shape[1], rng.child('period-' + str(i)))
        s_tilde = sample_soft(eta, eps, temperature)
        _, grad_modules, _ = soft_objective_and_grads(mods, s_tilde, batch, sigma2, normalization)
        grads += grad_modules
    grads /= len(periods)
    return mods.replace_modules(state.ascend(mods.modules, grads))


def select_periods(n_periods, meta_batch, rng):
    """Indices of the periods used in one meta-iteration (all periods if
    meta_batch is None)."""
    if meta_batch is None or meta_batch >= n_periods:
        return list(range(n_periods))
    return sorted(int(i) for i in rng.generator.choice(n_periods, size=meta_batch, replace=False))


def meta_train_modular(meta_data, policy, cfg, rng, init=None, history=None):
    """Modular meta-training: alternate logit adaptation on D^tr of every
    period with first-order module updates on D^te. Logits start at zero in
    every iteration; the temperature anneals once per iteration.

    Parameters
    ----------
    meta_data : list(netsim.PeriodDataset)
        Meta-training periods
    policy : regnn.PolicyConfig
        Architecture and channel constants
    cfg : ModularConfig
        Modular meta-learning hyperparameters
    rng : netsim.RngStream
        Stream for initialization and Gumbel noise
    init : ModuleSet, optional
        Initial repository (drawn from rng if not given)
    history : list, optional
        Receives (meta_iter, mean_adapted_test_sum_rate, wall_ms) tuples

    Returns
    -------
    ModuleSet
    """
    if not meta_data:
        raise EmptyBatch('meta-training requires at least one period')
    if init is None:
        init = init_modules(cfg.modules, policy.n_taps, policy.pmax, rng.child('init'))
    mods = init
    train = [as_slot_batches(p.train_realizations(), policy.normalization) for p in meta_data]
    test = [as_slot_batches(p.test_realizations(), policy.normalization) for p in meta_data]
    state = OptimizerState(method=OPTIMIZER_ADAM, lr=cfg.delta)
    start = time.perf_counter()
    for it in range(cfg.iterations):
        it_rng = rng.child('iteration-' + str(it))
        selected = select_periods(len(meta_data), cfg.meta_batch, it_rng.child('select'))
        schedule = cfg.schedule.frozen_at(it)
        etas = [
            adapt_logits(
                mods,
                np.zeros((policy.layers, mods.size)),
                train[tau],
                cfg.inner_steps,
                cfg.gamma,
                schedule,
                it_rng.child('adapt-' + str(tau)),
                policy.sigma2
            )
                for tau in selected
        ]
        for step in range(cfg.outer_steps):
            mods = modules_outer_step(
                mods,
                etas,
                [test[tau] for tau in selected],
                cfg.delta,
                it_rng.child('outer-' + str(step)),
                policy.sigma2,
                temperature=schedule.lambda0,
                state=state
            )
        if history is not None or logger.isEnabledFor(logging.DEBUG):
            value = float(np.mean([
                hard_objective(mods, select_mode(eta), test[tau], policy.sigma2)
                    for eta, tau in zip(etas, selected)
            ]))
            logger.debug('modular iteration %d: %.6f', it, value)
            if history is not None:
                history.append((it, value, (time.perf_counter() - start) * 1000.0))
    logger.info('modular meta-training finished after %d iterations', cfg.iterations)
    return mods


def runtime_adapt_modular(
    mods, test_period, budget, steps, gamma, schedule, rng, sigma2,
    layers, normalization=GSO_SPECTRAL, history=None
):
    """Select the module assignment for a new period. The repository stays
    frozen; logits start at zero and are adapted on the first `budget`
    training slots. Returns the mode of the adapted distribution.

    Returns
    -------
    tuple(int)
    """
    eta = np.zeros((layers, mods.size))
    train = test_period.train_realizations(budget)
    if train and steps > 0:
        eta = adapt_logits(
            mods, eta, train, steps, gamma, schedule, rng, sigma2,
            normalization=normalization,
            history=history
        )
    return select_mode(eta)


def exhaustive_assignment(
    mods, train, sigma2, layers, cap=4096, normalization=GSO_SPECTRAL
):
    """Evaluate all M^L hard assignments on the training slots and return the
    best one with its mean sum-rate. Ties go to the lexicographically
    smallest assignment.

    Returns
    -------
    (tuple(int), float)
    """
    count = mods.size ** layers
    if count > cap:
        raise SearchSpaceTooLarge(
            '{} assignments exceed the search cap of {}'.format(count, cap)
        )
    batches = as_slot_batches(train, normalization)
    best, best_value = None, -np.inf
    for s in itertools.product(range(mods.size), repeat=layers):
        value = hard_objective(mods, s, batches, sigma2)
        if value > best_value:
            best, best_value = s, value
    return tuple(int(i) for i in best), best_value
