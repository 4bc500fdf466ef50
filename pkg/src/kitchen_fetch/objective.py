"""Clipped-surrogate PPO objective on per-sample arrays.

Shared by the trainer (loss reporting) and by ``policy.backward`` (the
derivative of the surrogate with respect to the new log-probabilities).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    """A NaN or infinity turned up where a finite number is required."""


@dataclass(frozen=True)
class LossSpec:
    clip_epsilon: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01


@dataclass(frozen=True)
class LossTerms:
    total: float
    policy: float
    value: float
    entropy: float  # mean entropy (the loss carries -entropy_coef * entropy)
    clip_fraction: float
    approx_kl: float


def ratio_and_clip(new_log_prob, old_log_prob, advantage, clip_epsilon):
    """Probability ratios and the mask of samples where the clipped branch is selected.

    The clipped branch is selected when ``clip(r) * A < r * A``; there its
    gradient with respect to the new log-probability is zero.
    """
    ratio = np.exp(np.asarray(new_log_prob, dtype=float) - np.asarray(old_log_prob, dtype=float))
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteError("non-finite probability ratio")
    advantage = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    binding = clipped * advantage < ratio * advantage
    return ratio, clipped, binding


def ppo_loss(new_log_prob, old_log_prob, advantage, value_pred, return_target, entropy, spec: LossSpec) -> LossTerms:
    ratio, clipped, binding = ratio_and_clip(new_log_prob, old_log_prob, advantage, spec.clip_epsilon)
    advantage = np.asarray(advantage, dtype=float)
    surrogate = np.minimum(ratio * advantage, clipped * advantage)
    policy = -float(np.mean(surrogate))
    value = spec.value_coef * float(np.mean((np.asarray(value_pred) - np.asarray(return_target)) ** 2))
    mean_entropy = float(np.mean(entropy))
    total = policy + value - spec.entropy_coef * mean_entropy
    approx_kl = float(np.mean((ratio - 1.0) - np.log(ratio)))
    return LossTerms(total, policy, value, mean_entropy, float(np.mean(binding)), approx_kl)


def surrogate_grad(new_log_prob, old_log_prob, advantage, clip_epsilon: float) -> np.ndarray:
    """d(policy term) / d(new_log_prob) per sample, including the 1/N of the mean."""
    ratio, _, binding = ratio_and_clip(new_log_prob, old_log_prob, advantage, clip_epsilon)
    advantage = np.asarray(advantage, dtype=float)
    return np.where(binding, 0.0, -ratio * advantage) / ratio.size
