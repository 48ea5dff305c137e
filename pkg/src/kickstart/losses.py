"""Kickstarting objective: actor-critic with V-trace plus teacher cross-entropy.

Every loss returns ``(value, gradient w.r.t. its network outputs)``. Losses are
summed over time steps and averaged over the batch. Value targets and
advantages are constants of the objective: no gradient flows through them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import nets
from .errors import ConfigError, NonFiniteError
from .trajectory import Batch, as_batch


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _check_logits(*arrays):
    for a in arrays:
        if a.shape[-1] < 2:
            raise ConfigError("need at least two actions")
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite logits")


def distill_loss(teacher_logits, student_logits) -> Tuple[float, np.ndarray]:
    """Cross-entropy H(teacher || student), summed over leading axes.

    Gradient w.r.t. the student logits is ``softmax(student) - softmax(teacher)``.
    """
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise ConfigError(f"teacher/student logits shapes differ: {t.shape} vs {s.shape}")
    _check_logits(t, s)
    pt = softmax(t)
    loss = -float(np.sum(pt * log_softmax(s)))
    # same softmax on both sides: identical logits give an exactly zero gradient
    return loss, softmax(s) - pt


def entropy_loss(logits) -> Tuple[float, np.ndarray]:
    """Negated entropy ``sum_a p_a log p_a`` (summed over leading axes) and its gradient."""
    z = np.asarray(logits, dtype=np.float64)
    _check_logits(z)
    logp = log_softmax(z)
    p = np.exp(logp)
    per_row = np.sum(p * logp, axis=-1, keepdims=True)
    return float(per_row.sum()), p * (logp - per_row)


def entropy(logits) -> np.ndarray:
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    return -np.sum(np.exp(logp) * logp, axis=-1)


@dataclass
class VTraceOutput:
    value_targets: np.ndarray  # v_t, shape (..., T)
    policy_weights: np.ndarray  # clipped rho_t, shape (..., T)
    advantages: np.ndarray  # rho_t * (r_t + gamma * v_{t+1} - V(x_t))
    trace_weights: Optional[np.ndarray] = None  # clipped c_t


def vtrace_from_arrays(
    behaviour_logits,
    target_logits,
    actions,
    rewards,
    values,
    discounts,
    clip_rho: float = 1.0,
    clip_c: float = 1.0,
) -> VTraceOutput:
    """V-trace targets for arrays shaped ``(..., T)`` (logits ``(..., T, A)``).

    ``values`` carries ``T + 1`` entries per sequence (the last is the
    bootstrap value). ``discounts`` is ``gamma`` zeroed at terminal steps.
    """
    if behaviour_logits is None:
        raise ValueError("V-trace needs behaviour-policy logits for every step")
    behaviour_logits = np.asarray(behaviour_logits, dtype=np.float64)
    target_logits = np.asarray(target_logits, dtype=np.float64)
    actions = np.asarray(actions)
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    discounts = np.asarray(discounts, dtype=np.float64)
    T = actions.shape[-1]
    if values.shape[-1] != T + 1 or rewards.shape != actions.shape or discounts.shape != actions.shape:
        raise ConfigError("V-trace inputs have inconsistent lengths")
    idx = actions[..., None]
    log_mu = np.take_along_axis(log_softmax(behaviour_logits), idx, axis=-1)[..., 0]
    log_pi = np.take_along_axis(log_softmax(target_logits), idx, axis=-1)[..., 0]
    if not np.all(np.isfinite(log_mu)):
        raise ValueError("behaviour policy assigns zero probability to a taken action")
    ratios = np.exp(log_pi - log_mu)
    rhos = np.minimum(clip_rho, ratios)
    cs = np.minimum(clip_c, ratios)
    v_now = values[..., :-1]
    v_next = values[..., 1:]
    deltas = rhos * (rewards + discounts * v_next - v_now)
    # backward recursion on (v_s - V(x_s)), zero at the bootstrap step
    diff = np.zeros_like(values)
    for t in range(T - 1, -1, -1):
        diff[..., t] = deltas[..., t] + discounts[..., t] * cs[..., t] * diff[..., t + 1]
    targets_all = values + diff
    targets = targets_all[..., :-1]
    advantages = rhos * (rewards + discounts * targets_all[..., 1:] - v_now)
    return VTraceOutput(targets, rhos, advantages, cs)


def vtrace(trajectory, student_values, student_logits, clip_rho=1.0, clip_c=1.0, gamma=0.99) -> VTraceOutput:
    """V-trace for a trajectory (or batch) against the student's current outputs."""
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"discount must be in [0, 1), got {gamma}")
    b = as_batch(trajectory)
    squeeze = not isinstance(trajectory, (Batch, list, tuple))
    values = np.asarray(student_values, dtype=np.float64)
    logits = np.asarray(student_logits, dtype=np.float64)
    if squeeze:
        values, logits = values[None], logits[None]
    discounts = gamma * (1.0 - b.terminals.astype(np.float64))
    out = vtrace_from_arrays(b.behaviour_logits, logits, b.actions, b.rewards, values, discounts, clip_rho, clip_c)
    if squeeze:
        out = VTraceOutput(*(None if x is None else x[0] for x in
                             (out.value_targets, out.policy_weights, out.advantages, out.trace_weights)))
    return out


def a3c_policy_loss(actions, vtrace_out: VTraceOutput, student_logits) -> Tuple[float, np.ndarray]:
    """``-sum_t log pi(a_t | x_t) * advantage_t``; the advantages already carry rho_t."""
    logits = np.asarray(student_logits, dtype=np.float64)
    actions = np.asarray(actions)
    adv = np.asarray(vtrace_out.advantages, dtype=np.float64)
    if logits.shape[:-1] != actions.shape or adv.shape != actions.shape:
        raise ConfigError(
            f"shape mismatch: logits {logits.shape}, actions {actions.shape}, advantages {adv.shape}"
        )
    logp = log_softmax(logits)
    logp_a = np.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]
    loss = -float(np.sum(logp_a * adv))
    grad = np.exp(logp)
    np.put_along_axis(grad, actions[..., None], np.take_along_axis(grad, actions[..., None], axis=-1) - 1.0, axis=-1)
    return loss, grad * adv[..., None]


def value_loss(student_values, targets) -> Tuple[float, np.ndarray]:
    v = np.asarray(student_values, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if v.shape != tgt.shape:
        raise ConfigError(f"values {v.shape} and targets {tgt.shape} differ in shape")
    diff = v - tgt
    return float(np.sum(diff * diff)), 2.0 * diff


@dataclass
class LossTerms:
    policy_gradient_loss: float
    value_loss: float
    entropy_loss: float
    distill_loss: np.ndarray
    total: float

    def as_dict(self):
        return {
            "policy_gradient": self.policy_gradient_loss,
            "value": self.value_loss,
            "entropy": self.entropy_loss,
            "distill": [float(x) for x in self.distill_loss],
            "total": self.total,
        }


def _lambda_per_row(batch: Batch, lambdas: np.ndarray) -> Optional[np.ndarray]:
    """Distillation weight for each trajectory of the batch, or None if none apply."""
    if lambdas.size == 0 or not np.any(lambdas > 0):
        return None
    if batch.teacher_logits is None or batch.teacher_index is None:
        raise ConfigError("distillation weights given but the batch carries no teacher logits")
    idx = batch.teacher_index
    if np.any(idx < 0) or np.any(idx >= lambdas.size):
        bad = sorted({batch.task_ids[i] for i in np.flatnonzero((idx < 0) | (idx >= lambdas.size))})
        raise ConfigError(f"no teacher routed for tasks {bad}")
    return lambdas[idx]


def loss_with_targets(
    net: nets.PolicyValueNet,
    batch: Batch,
    vt: VTraceOutput,
    lambdas,
    entropy_cost: float,
    value_weight: float = 0.5,
    rl: bool = True,
    cache=None,
) -> Tuple[LossTerms, nets.GradientBuffer]:
    """Combined loss and parameter gradient with V-trace outputs held fixed."""
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    if np.any(lambdas < 0):
        raise ConfigError(f"distillation weights must be non-negative, got {lambdas}")
    B, T = batch.actions.shape
    obs = batch.observations.reshape(B * (T + 1), -1)
    if cache is None:
        logits_all, values_all, acts = nets._forward_cached(net, obs)
    else:
        logits_all, values_all, acts = cache
    A = logits_all.shape[-1]
    logits = logits_all.reshape(B, T + 1, A)[:, :T]
    values = values_all.reshape(B, T + 1)[:, :T]

    d_logits = np.zeros((B, T, A))
    d_values = np.zeros((B, T))
    pg = vl = ent = 0.0
    if rl:
        pg, g = a3c_policy_loss(batch.actions, vt, logits)
        d_logits += g
        vl, g = value_loss(values, vt.value_targets)
        d_values += value_weight * g
        ent, g = entropy_loss(logits)
        d_logits += entropy_cost * g
    pg, vl, ent = pg / B, vl / B, ent / B
    total = pg + value_weight * vl + entropy_cost * ent
    distill = np.zeros(lambdas.size)
    if _lambda_per_row(batch, lambdas) is not None:
        for i in range(lambdas.size):
            rows = np.flatnonzero(batch.teacher_index == i)
            if rows.size == 0 or lambdas[i] == 0.0:
                continue
            d_i, g = distill_loss(batch.teacher_logits[rows], logits[rows])
            distill[i] = d_i / B
            d_logits[rows] += lambdas[i] * g
            total += lambdas[i] * distill[i]
    terms = LossTerms(pg, vl, ent, distill, total)
    if not np.isfinite(total):
        raise NonFiniteError(f"non-finite loss: {terms.as_dict()}")

    up_logits = np.zeros((B, T + 1, A))
    up_logits[:, :T] = d_logits / B
    up_values = np.zeros((B, T + 1))
    up_values[:, :T] = d_values / B
    grads = nets._backward_from_cache(net, acts, up_logits.reshape(-1, A), up_values.reshape(-1))
    return terms, grads


def kickstart_loss(
    trajectory,
    net: nets.PolicyValueNet,
    lambdas: Sequence[float] = (),
    entropy_cost: float = 0.01,
    value_weight: float = 0.5,
    gamma: float = 0.99,
    clip_rho: float = 1.0,
    clip_c: float = 1.0,
    rl: bool = True,
) -> Tuple[LossTerms, nets.GradientBuffer, VTraceOutput]:
    """RL loss plus ``lambda_i`` times the cross-entropy to each routed teacher.

    ``lambdas[i]`` weights teacher ``i``; each trajectory is supervised only by
    the teacher in its ``teacher_index``. ``rl=False`` drops the actor-critic
    terms (pure distillation). Returns the loss terms, the parameter gradient
    of the batch-mean loss and the V-trace outputs used.
    """
    batch = as_batch(trajectory)
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"discount must be in [0, 1), got {gamma}")
    B, T = batch.actions.shape
    obs = batch.observations.reshape(B * (T + 1), -1)
    cache = nets._forward_cached(net, obs)
    if rl:
        A = cache[0].shape[-1]
        discounts = gamma * (1.0 - batch.terminals.astype(np.float64))
        vt = vtrace_from_arrays(
            batch.behaviour_logits,
            cache[0].reshape(B, T + 1, A)[:, :T],
            batch.actions,
            batch.rewards,
            cache[1].reshape(B, T + 1),
            discounts,
            clip_rho,
            clip_c,
        )
    else:
        zeros = np.zeros((B, T))
        vt = VTraceOutput(zeros, np.ones((B, T)), zeros, np.ones((B, T)))
    terms, grads = loss_with_targets(net, batch, vt, lambdas, entropy_cost, value_weight, rl, cache)
    return terms, grads, vt
