"""Loss functions and targets for the offline trainers.

All losses take batched (B, J) score tensors plus a boolean legality mask
and return scalar tensors. Targets are plain numpy (no gradient flows
through them). Masked actions contribute exactly zero to every term.

Conservative regularizer (applied to every critic):

    cql = alpha_cql * mean_b[ logsumexp_{a in A(s)} Q(s, a) - Q(s, a_data) ]

Quantile critic: the Bellman target copies the target network's quantiles
at the next-state action with the best mean-quantile value; the loss is
the quantile Huber loss with midpoints tau_i = (2i - 1) / (2N).

Discrete SAC: twin critics regress onto
r + gamma * sum_a pi(a|s') min(Q1', Q2')(s', a); the actor minimizes
E[pi^T (alpha log pi - min(Q1, Q2))]; the temperature moves alpha toward
the entropy target c_H * log|A(s)| (per-state, so the target tracks the
shrinking action space).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CompatibilityError, DataError
from .model import ModelParams


@dataclass
class AgentConfig:
    alpha_cql: float = 1.0
    gamma: float = 1.0
    n_quantiles: int = 32
    kappa: float = 1.0
    c_entropy: float = 0.98
    target_update_every: int = 2500
    reward_mode: str = "normalized"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DataError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.n_quantiles < 1:
            raise DataError("need at least one quantile")
        if not 0.0 < self.c_entropy <= 1.0:
            raise DataError("entropy target ratio must be in (0, 1]")


def _check_actions_legal(mask: np.ndarray, actions: np.ndarray) -> None:
    if not mask[np.arange(len(actions)), actions].all():
        raise DataError("dataset action is masked in its own state")


def cql_term(
    q_values: Tensor, mask: np.ndarray, dataset_action: np.ndarray,
    alpha_cql: float = 1.0,
) -> Tensor:
    """Batch-mean of logsumexp over legal actions minus the dataset action's Q."""
    dataset_action = np.asarray(dataset_action)
    _check_actions_legal(mask, dataset_action)
    lse = ad.logsumexp_masked(q_values, mask)
    q_data = ad.take_per_row(q_values, dataset_action)
    return ad.mean(lse - q_data) * float(alpha_cql)


def qrdqn_target(
    reward: np.ndarray,
    next_quantiles: np.ndarray,
    next_mask: np.ndarray,
    terminal: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """(B, N) quantile targets: r + gamma * quantiles(s', argmax mean-Q legal a').

    next_quantiles is (B, J, N) from the target network; terminal rows get
    a constant r target (no bootstrap).
    """
    reward = np.asarray(reward, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    b, _j, n = next_quantiles.shape
    mean_q = next_quantiles.mean(axis=2)
    mean_q = np.where(next_mask, mean_q, -np.inf)
    target = np.tile(reward[:, None], (1, n))
    live = ~terminal
    if live.any():
        if not next_mask[live].any(axis=1).all():
            raise DataError("non-terminal transition with an empty next mask")
        a_max = mean_q[live].argmax(axis=1)
        target[live] += gamma * next_quantiles[live, a_max, :]
    return target


def quantile_midpoints(n: int) -> np.ndarray:
    return (2 * np.arange(1, n + 1) - 1) / (2 * n)


def qrdqn_loss(pred_quantiles: Tensor, target_quantiles: np.ndarray,
               kappa: float = 1.0) -> Tensor:
    """Quantile Huber loss, summed over predicted quantiles, averaged over
    target quantiles, then over the batch."""
    b, n = pred_quantiles.shape
    target = np.asarray(target_quantiles, dtype=pred_quantiles.data.dtype)
    if target.shape != (b, n):
        raise DataError(f"target shape {target.shape} != prediction shape {(b, n)}")
    pred3 = ad.reshape(pred_quantiles, (b, n, 1))
    u = ad.Tensor(target.reshape(b, 1, n)) - pred3  # u[b, i, j]
    tau = quantile_midpoints(n).reshape(1, n, 1)
    weight = np.abs(tau - (u.data < 0)).astype(pred_quantiles.data.dtype)
    rho = ad.mul(ad.huber(u, kappa), ad.Tensor(weight))
    per_sample = ad.sum_axis(ad.mean_axis(rho, axis=2), axis=1)
    return ad.mean(per_sample)


def sac_policy_loss(
    policy_probs: Tensor, log_probs: Tensor,
    q1: Tensor, q2: Tensor, alpha: float, mask: np.ndarray,
) -> Tensor:
    """E_s[ pi^T (alpha log pi - min(Q1, Q2)) ]; pass detached critics."""
    min_q = ad.minimum(q1, q2)
    inner = log_probs * float(alpha) - min_q
    # masked slots: probs are exactly 0, so junk scores contribute nothing
    contrib = ad.mul(policy_probs, inner)
    masked = ad.mul(contrib, ad.Tensor(mask.astype(contrib.data.dtype)))
    return ad.mean(ad.sum_axis(masked, axis=1))


def sac_q_target(
    reward: np.ndarray,
    next_probs: np.ndarray,
    next_q1_target: np.ndarray,
    next_q2_target: np.ndarray,
    terminal: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """(B,) targets: r + gamma * sum_a pi(a|s') min(Q1', Q2')(s', a).

    next_probs must carry exact zeros at masked actions (softmax_masked
    postcondition), so masked Q values cannot leak into the expectation.
    """
    reward = np.asarray(reward, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    min_q = np.minimum(next_q1_target, next_q2_target)
    expect = (next_probs * min_q).sum(axis=1)
    return np.where(terminal, reward, reward + gamma * expect)


def temperature_loss(
    policy_probs: np.ndarray,
    log_probs: np.ndarray,
    mask_sizes: np.ndarray,
    c_entropy: float,
    log_alpha: Tensor,
) -> Tensor:
    """Move alpha toward the per-state entropy target c_H * log|A(s)|.

    Gradient descent on alpha * (entropy - target): alpha shrinks while the
    policy is above its entropy target and grows when it collapses below.
    Only log_alpha receives gradient; the policy is treated as a constant.
    """
    mask_sizes = np.asarray(mask_sizes, dtype=np.float64)
    if (mask_sizes < 1).any():
        raise DataError("every state needs at least one legal action")
    entropy = -(policy_probs * log_probs).sum(axis=1)
    target = c_entropy * np.log(mask_sizes)
    alpha = ad.exp(log_alpha)
    return alpha * float(np.mean(entropy - target))


def bc_loss(policy_logits: Tensor, mask: np.ndarray,
            dataset_action: np.ndarray) -> Tensor:
    """Masked cross-entropy toward the dataset action."""
    dataset_action = np.asarray(dataset_action)
    _check_actions_legal(mask, dataset_action)
    log_probs = ad.log_softmax_masked(policy_logits, mask)
    return -ad.mean(ad.take_per_row(log_probs, dataset_action))


def sync_target(online: ModelParams, target: ModelParams, step: int,
                every: int = 2500) -> None:
    """Hard-copy online weights into the target copy every ``every`` steps."""
    if online.names() != target.names() or online.config != target.config:
        raise CompatibilityError("online/target parameter manifests differ")
    if step % every == 0:
        target.copy_from(online)
