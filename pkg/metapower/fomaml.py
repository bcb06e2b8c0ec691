"""First-order model-agnostic meta-learning (FOMAML) of REGNN policies and
the joint-learning baseline.

Meta-training learns a shared initialization of the filter taps. For every
period the initialization is adapted by plain gradient ascent on the
training slots; the gradient of the test-slot objective at the adapted
parameters (ignoring second-order terms) is averaged over periods and drives
an adaptive-moment update of the shared initialization.

Joint learning pools the training slots of all periods and trains a single
set of taps on mini-batches of (period, slot) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import time
from typing import Optional

import numpy as np

from metapower.errors import EmptyBatch, ValidationError
from metapower.netsim import GSO_SPECTRAL
from metapower.regnn import (
    OPTIMIZER_ADAM, OptimizerState, as_slot_batches, batch_objective,
    batch_objective_and_grad, init_params, optimizer_step
)


logger = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
#
# Domain types
#
# ------------------------------------------------------------------------------

@dataclass(frozen=True)
class MetaConfig(object):
    """Hyperparameters of FOMAML meta-training and joint learning.

    Attributes
    ----------
    iterations : int
        Number of meta-iterations I
    inner_steps : int
        Plain gradient ascent steps of the per-period adaptation
    outer_steps : int
        Updates of the shared initialization per meta-iteration
    gamma : float
        Inner step size
    delta : float
        Outer step size (adaptive-moment optimizer)
    meta_batch : int, optional
        Periods per meta-iteration; None selects all periods
    joint_steps : int
        Joint-learning updates per meta-iteration
    joint_lr : float
        Step size of joint learning
    """
    iterations: int = 200
    inner_steps: int = 5
    outer_steps: int = 5
    gamma: float = 1e-4
    delta: float = 1e-4
    meta_batch: Optional[int] = None
    joint_steps: int = 5
    joint_lr: float = 1e-4

    def __post_init__(self):
        counts = [self.iterations, self.inner_steps, self.outer_steps, self.joint_steps]
        if any(c < 0 for c in counts):
            raise ValidationError('iteration counts must be non-negative')
        if not (self.gamma > 0 and self.delta > 0 and self.joint_lr > 0):
            raise ValidationError('step sizes must be positive')
        if self.meta_batch is not None and self.meta_batch < 1:
            raise ValidationError('meta batch must contain at least one period')


# ------------------------------------------------------------------------------
#
# Adaptation
#
# ------------------------------------------------------------------------------

def inner_adapt(init, train, steps, gamma, sigma2, normalization=GSO_SPECTRAL):
    """Adapt an initialization to one period by plain gradient ascent on the
    mean sum-rate of its training slots.

    Parameters
    ----------
    init : regnn.ReGnnParams
        Initialization Phi_0
    train : list(netsim.ChannelRealization) or list(regnn.SlotBatch)
        Training slots of the period
    steps : int
        Number of ascent steps
    gamma : float
        Step size
    sigma2 : float
        Noise power (linear mW)
    normalization : string, optional
        Shift operator normalization

    Returns
    -------
    regnn.ReGnnParams
    """
    if steps < 0:
        raise ValidationError('number of adaptation steps must be non-negative')
    if steps == 0:
        return init
    batches = as_slot_batches(train, normalization)
    params = init
    for _ in range(steps):
        _, grads = batch_objective_and_grad(params, batches, sigma2)
        params = params.replace_taps(params.taps + gamma * grads)
    return params


def _meta_gradient(init, periods, cfg, sigma2, normalization):
    """Mean first-order meta-gradient and mean adapted test objective."""
    if not periods:
        raise EmptyBatch('meta step requires at least one period')
    grads = np.zeros(init.taps.shape)
    total = 0.0
    for train, test in periods:
        adapted = inner_adapt(init, train, cfg.inner_steps, cfg.gamma, sigma2, normalization)
        value, grad = batch_objective_and_grad(adapted, test, sigma2, normalization)
        grads += grad
        total += value
    return grads / len(periods), total / len(periods)


def _split(periods, normalization):
    return [
        (
            as_slot_batches(p.train_realizations(), normalization),
            as_slot_batches(p.test_realizations(), normalization)
        )
            for p in periods
    ]


def fomaml_meta_step(
    init, periods, cfg, sigma2, state=None, normalization=GSO_SPECTRAL
):
    """One update of the shared initialization.

    Every period adapts Phi_0 on its training slots; the gradients of the
    test-slot objective at the adapted taps are averaged and applied to
    Phi_0 with one outer ascent step.

    Parameters
    ----------
    init : regnn.ReGnnParams
        Current initialization Phi_0
    periods : list(netsim.PeriodDataset)
        Periods of the meta-batch
    cfg : MetaConfig
        Meta-learning hyperparameters
    sigma2 : float
        Noise power (linear mW)
    state : regnn.OptimizerState, optional
        Outer optimizer state; a fresh adaptive-moment state with step size
        delta is used if not given
    normalization : string, optional
        Shift operator normalization

    Returns
    -------
    regnn.ReGnnParams
    """
    if state is None:
        state = OptimizerState(method=OPTIMIZER_ADAM, lr=cfg.delta)
    grads, _ = _meta_gradient(init, _split(periods, normalization), cfg, sigma2, normalization)
    return optimizer_step(state, init, grads)


def _select(n_periods, meta_batch, rng):
    if meta_batch is None or meta_batch >= n_periods:
        return list(range(n_periods))
    return sorted(int(i) for i in rng.generator.choice(n_periods, size=meta_batch, replace=False))


def meta_train_fomaml(meta_data, policy, cfg, rng, init=None, history=None):
    """Run I meta-iterations of FOMAML and return the final initialization.

    Parameters
    ----------
    meta_data : list(netsim.PeriodDataset)
        Meta-training periods
    policy : regnn.PolicyConfig
        Architecture and channel constants
    cfg : MetaConfig
        Meta-learning hyperparameters
    rng : netsim.RngStream
        Stream for the initialization and period selection
    init : regnn.ReGnnParams, optional
        Seed initialization (drawn from rng if not given)
    history : list, optional
        Receives (meta_iter, mean_adapted_test_sum_rate, wall_ms) tuples

    Returns
    -------
    regnn.ReGnnParams
    """
    if not meta_data:
        raise EmptyBatch('meta-training requires at least one period')
    if init is None:
        init = init_params(policy.layers, policy.n_taps, policy.pmax, rng.child('init'))
    splits = _split(meta_data, policy.normalization)
    state = OptimizerState(method=OPTIMIZER_ADAM, lr=cfg.delta)
    params = init
    start = time.perf_counter()
    for it in range(cfg.iterations):
        selected = _select(len(meta_data), cfg.meta_batch, rng.child('select-' + str(it)))
        value = None
        for _ in range(cfg.outer_steps):
            grads, value = _meta_gradient(
                params,
                [splits[tau] for tau in selected],
                cfg,
                policy.sigma2,
                policy.normalization
            )
            params = optimizer_step(state, params, grads)
        if value is None:
            _, value = _meta_gradient(
                params, [splits[tau] for tau in selected], cfg, policy.sigma2, policy.normalization
            )
        wall_ms = (time.perf_counter() - start) * 1000.0
        logger.debug('fomaml iteration %d: %.6f', it, value)
        if history is not None:
            history.append((it, value, wall_ms))
    logger.info('FOMAML meta-training finished after %d iterations', cfg.iterations)
    return params


# ------------------------------------------------------------------------------
#
# Joint learning and runtime fine-tuning
#
# ------------------------------------------------------------------------------

def joint_train(meta_data, policy, cfg, rng, init=None, history=None):
    """Train a single policy on the pooled training slots of all periods.

    Every update draws a mini-batch of (period, slot) pairs uniformly without
    replacement from the pool (the whole pool if it is smaller than the batch
    size). The total number of updates is iterations x joint_steps.

    Parameters
    ----------
    meta_data : list(netsim.PeriodDataset)
        Meta-training periods
    policy : regnn.PolicyConfig
        Architecture and channel constants
    cfg : MetaConfig
        Iteration counts and joint step size
    rng : netsim.RngStream
        Stream for the initialization and mini-batches
    init : regnn.ReGnnParams, optional
        Initial taps (drawn from rng if not given)
    history : list, optional
        Receives (step, pooled_train_sum_rate) tuples once per meta-iteration

    Returns
    -------
    regnn.ReGnnParams
    """
    if not meta_data:
        raise EmptyBatch('joint training requires at least one period')
    if init is None:
        init = init_params(policy.layers, policy.n_taps, policy.pmax, rng.child('init'))
    pool = [p.train_realizations() for p in meta_data]
    pairs = [(tau, i) for tau, slots in enumerate(pool) for i in range(len(slots))]
    if not pairs:
        raise EmptyBatch('periods contain no training slots')
    size = min(policy.batch_size, len(pairs))
    batch_rng = rng.child('minibatch')
    state = OptimizerState(method=OPTIMIZER_ADAM, lr=cfg.joint_lr)
    params = init
    total = cfg.iterations * cfg.joint_steps
    for step in range(total):
        chosen = np.sort(batch_rng.generator.choice(len(pairs), size=size, replace=False))
        batch = [pool[pairs[j][0]][pairs[j][1]] for j in chosen]
        value, grads = batch_objective_and_grad(params, batch, policy.sigma2, policy.normalization)
        params = optimizer_step(state, params, grads)
        if history is not None and (step + 1) % max(cfg.joint_steps, 1) == 0:
            history.append((step, value))
    logger.info('joint training finished after %d steps', total)
    return params


def runtime_finetune(
    params, test_period, steps, gamma, budget, sigma2, normalization=GSO_SPECTRAL
):
    """Fine-tune parameters on the first `budget` training slots of a new
    period. Without training slots the parameters are returned unchanged.

    Returns
    -------
    regnn.ReGnnParams
    """
    train = test_period.train_realizations(budget)
    if not train or steps == 0:
        return params
    return inner_adapt(params, train, steps, gamma, sigma2, normalization)


def evaluate_params(params, period, sigma2, normalization=GSO_SPECTRAL):
    """Mean sum-rate of a policy over the test slots of a period."""
    return batch_objective(params, period.test_realizations(), sigma2, normalization)
