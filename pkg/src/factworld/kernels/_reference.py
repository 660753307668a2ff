"""NumPy reference implementations of the hot numeric kernels.

These are the fallback used when the compiled extension is unavailable.
All functions take float64 C-contiguous arrays and assume validation was
done by the caller. Constant inputs are detected by exact comparison so the
zero-variance conventions hold exactly (a computed mean of identical floats
can be off by an ulp, which would otherwise turn 0/0 into garbage).
"""

from __future__ import annotations

import numpy as np


def group_mean_std(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population std of a (G, K) matrix."""
    mean = values.mean(axis=0)
    std = np.sqrt(np.mean((values - mean) ** 2, axis=0))
    const = np.all(values == values[0], axis=0)
    mean[const] = values[0][const]
    std[const] = 0.0
    return mean, std


def grpo_advantages(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Group-normalized advantages of the weighted reward sums."""
    s = values @ weights
    if np.all(s == s[0]):
        return np.zeros(s.shape[0])
    mu = s.mean()
    sd = np.sqrt(np.mean((s - mu) ** 2))
    if sd == 0.0:
        return np.zeros(s.shape[0])
    return (s - mu) / sd


def cgdpo_advantages(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-dimension group normalization followed by the weighted sum.

    A zero-variance dimension contributes 0 for every rollout.
    """
    mean, std = group_mean_std(values)
    live = std > 0.0
    if not live.any():
        return np.zeros(values.shape[0])
    z = (values[:, live] - mean[live]) / std[live]
    return z @ weights[live]


def clipped_objective_terms(
    ratios: np.ndarray, advantage: float, clip_eps: float, dual_clip: float
) -> np.ndarray:
    """Per-token clipped surrogate values, with the dual-clip floor for
    negative advantages."""
    clipped = np.clip(ratios, 1.0 - clip_eps, 1.0 + clip_eps)
    out = np.minimum(ratios * advantage, clipped * advantage)
    if advantage < 0.0:
        np.maximum(out, dual_clip * advantage, out=out)
    return out


def clipped_objective_ratio_grad(
    ratios: np.ndarray, advantage: float, clip_eps: float, dual_clip: float
) -> np.ndarray:
    """Derivative of each surrogate term with respect to its ratio."""
    if advantage >= 0.0:
        active = ratios < 1.0 + clip_eps
    else:
        active = (ratios >= 1.0 - clip_eps) & (ratios <= dual_clip)
    return np.where(active, advantage, 0.0)


def rollout1_surface(
    candidates: np.ndarray, fixed: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Rollout-1 advantages under both estimators, for each candidate vector.

    Each row of ``candidates`` is placed as rollout 1 in a group with the
    ``fixed`` competitor rows; returns the (N,) summed-GRPO and decoupled
    advantage arrays for that rollout.
    """
    n = candidates.shape[0]
    f = fixed.shape[0]
    g = f + 1

    s1 = candidates @ weights
    s_fixed = fixed @ weights
    stack = np.empty((n, g))
    stack[:, 0] = s1
    stack[:, 1:] = s_fixed
    mu = stack.mean(axis=1)
    sd = np.sqrt(np.mean((stack - mu[:, None]) ** 2, axis=1))
    const = np.all(stack == stack[:, :1], axis=1)
    dead = const | (sd == 0.0)
    grpo = np.where(dead, 0.0, (s1 - mu) / np.where(dead, 1.0, sd))

    cgdpo = np.zeros(n)
    col = np.empty((n, g))
    for k in range(candidates.shape[1]):
        col[:, 0] = candidates[:, k]
        col[:, 1:] = fixed[:, k]
        mu_k = col.mean(axis=1)
        sd_k = np.sqrt(np.mean((col - mu_k[:, None]) ** 2, axis=1))
        const_k = np.all(col == col[:, :1], axis=1)
        dead_k = const_k | (sd_k == 0.0)
        cgdpo += np.where(
            dead_k,
            0.0,
            weights[k] * (candidates[:, k] - mu_k) / np.where(dead_k, 1.0, sd_k),
        )
    return grpo, cgdpo
