"""Clipped surrogate objective over rollout batches, plus a gradient checker.

The objective is written to be MAXIMIZED; descent-style trainers negate it.
Per-token terms are ``min(s * A, clip(s, 1-eps, 1+eps) * A)`` with ``s`` the
token-level importance ratio and ``A`` the rollout's advantage; for negative
advantages the term is additionally floored at ``dual_clip_c * A`` so a
runaway ratio cannot produce an unbounded destructive update. There is no
KL term.

Policies are duck-typed. Anything with these four methods works:

* ``get_params() -> np.ndarray`` — flat parameter vector (copy);
* ``set_params(v)`` — load a flat parameter vector;
* ``action_logps(actions) -> np.ndarray`` — per-token log-probabilities of
  the given action sequence under the current parameters;
* ``action_logp_grads(actions) -> np.ndarray`` — (T, n_params) Jacobian of
  those log-probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ValidationError

TOKEN_SUM_SEQUENCE_MEAN = "token_sum_sequence_mean"
SEQUENCE_TOKEN_MEAN = "sequence_token_mean"
_MODES = (TOKEN_SUM_SEQUENCE_MEAN, SEQUENCE_TOKEN_MEAN)


@dataclass(frozen=True)
class ClipConfig:
    """Clipping band half-width and the dual-clip floor constant."""

    epsilon_clip: float = 0.2
    dual_clip_c: float = 3.0

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon_clip < 1.0:
            raise ValidationError("epsilon_clip must be in (0, 1)")
        if not self.dual_clip_c > 1.0:
            raise ValidationError("dual_clip_c must exceed 1")


@dataclass(frozen=True)
class Rollout:
    """One sampled sequence: actions, old/new per-token log-probs, advantage."""

    actions: tuple[int, ...]
    logp_old: np.ndarray
    logp_new: np.ndarray
    advantage: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        lo = np.ascontiguousarray(self.logp_old, dtype=np.float64)
        ln = np.ascontiguousarray(self.logp_new, dtype=np.float64)
        t = len(self.actions)
        if lo.shape != (t,) or ln.shape != (t,):
            raise ValidationError(
                f"log-prob lengths {lo.shape}/{ln.shape} do not match {t} actions"
            )
        if not np.isfinite(self.advantage):
            raise ValidationError("advantage must be finite")
        object.__setattr__(self, "logp_old", lo)
        object.__setattr__(self, "logp_new", ln)

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class RolloutBatch:
    rollouts: tuple[Rollout, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rollouts", tuple(self.rollouts))
        if not self.rollouts:
            raise ValidationError("batch must contain at least one rollout")


def importance_ratios(logp_new: Sequence[float], logp_old: Sequence[float]) -> np.ndarray:
    """Elementwise exp(logp_new - logp_old)."""
    ln = np.ascontiguousarray(logp_new, dtype=np.float64)
    lo = np.ascontiguousarray(logp_old, dtype=np.float64)
    if ln.shape != lo.shape:
        raise ValidationError(f"length mismatch: {ln.shape} vs {lo.shape}")
    return np.exp(ln - lo)


def clipped_surrogate(
    ratios: Sequence[float], advantage: float, cfg: ClipConfig = ClipConfig()
) -> np.ndarray:
    """Per-token clipped objective contributions for one rollout."""
    r = np.ascontiguousarray(ratios, dtype=np.float64)
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValidationError("importance ratios must be positive and finite")
    return kernels.clipped_objective_terms(
        r, float(advantage), cfg.epsilon_clip, cfg.dual_clip_c
    )


def clipped_surrogate_ratio_grad(
    ratios: Sequence[float], advantage: float, cfg: ClipConfig = ClipConfig()
) -> np.ndarray:
    """d(term)/d(ratio) per token; zero wherever a clip is active."""
    r = np.ascontiguousarray(ratios, dtype=np.float64)
    return kernels.clipped_objective_ratio_grad(
        r, float(advantage), cfg.epsilon_clip, cfg.dual_clip_c
    )


def aggregate_objective(
    per_rollout_token_values: Sequence[Sequence[float]],
    mode: str = TOKEN_SUM_SEQUENCE_MEAN,
) -> float:
    """Reduce per-token values to a scalar objective.

    ``token_sum_sequence_mean`` sums the tokens within each rollout and
    averages over rollouts; ``sequence_token_mean`` averages within each
    rollout first. Empty rollouts contribute 0 under both modes.
    """
    if mode not in _MODES:
        raise ValidationError(f"unknown aggregation mode {mode!r}")
    if len(per_rollout_token_values) == 0:
        raise ValidationError("empty batch")
    totals = []
    for values in per_rollout_token_values:
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            totals.append(0.0)
        elif mode == TOKEN_SUM_SEQUENCE_MEAN:
            totals.append(float(v.sum()))
        else:
            totals.append(float(v.mean()))
    return float(np.mean(totals))


def batch_objective(
    policy,
    batch: RolloutBatch,
    cfg: ClipConfig = ClipConfig(),
    mode: str = TOKEN_SUM_SEQUENCE_MEAN,
) -> float:
    """Objective value under the policy's CURRENT parameters.

    New log-probs are recomputed from the policy; the batch's stored
    ``logp_new`` is a snapshot and is not used here.
    """
    values = []
    for ro in batch.rollouts:
        if len(ro) == 0:
            values.append(np.zeros(0))
            continue
        s = importance_ratios(policy.action_logps(ro.actions), ro.logp_old)
        values.append(clipped_surrogate(s, ro.advantage, cfg))
    return aggregate_objective(values, mode)


def batch_objective_gradient(
    policy,
    batch: RolloutBatch,
    cfg: ClipConfig = ClipConfig(),
    mode: str = TOKEN_SUM_SEQUENCE_MEAN,
) -> np.ndarray:
    """Analytic gradient of :func:`batch_objective` in the policy's parameters."""
    if mode not in _MODES:
        raise ValidationError(f"unknown aggregation mode {mode!r}")
    grad = None
    for ro in batch.rollouts:
        if len(ro) == 0:
            continue
        logp = policy.action_logps(ro.actions)
        s = np.exp(logp - ro.logp_old)
        # d(term)/d(logp) = d(term)/ds * ds/d(logp) = grad_s * s
        coeff = clipped_surrogate_ratio_grad(s, ro.advantage, cfg) * s
        if mode == SEQUENCE_TOKEN_MEAN:
            coeff = coeff / len(ro)
        contrib = coeff @ policy.action_logp_grads(ro.actions)
        grad = contrib if grad is None else grad + contrib
    if grad is None:
        grad = np.zeros_like(policy.get_params())
    return grad / len(batch.rollouts)


def gradient_check(
    policy,
    batch: RolloutBatch,
    step: float = 1e-5,
    cfg: ClipConfig = ClipConfig(),
    mode: str = TOKEN_SUM_SEQUENCE_MEAN,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    Parameters with |analytic| <= 1e-8 are skipped (relative error is
    meaningless at zero); returns 0.0 if nothing is left to compare. The
    policy's parameters are restored on exit.
    """
    if step <= 0:
        raise ValidationError("finite-difference step must be positive")
    analytic = batch_objective_gradient(policy, batch, cfg, mode)
    if not np.all(np.isfinite(analytic)):
        raise FloatingPointError("analytic gradient is not finite")

    theta = policy.get_params()
    numeric = np.empty_like(analytic)
    try:
        for j in range(theta.shape[0]):
            probe = theta.copy()
            probe[j] = theta[j] + step
            policy.set_params(probe)
            up = batch_objective(policy, batch, cfg, mode)
            probe[j] = theta[j] - step
            policy.set_params(probe)
            down = batch_objective(policy, batch, cfg, mode)
            numeric[j] = (up - down) / (2.0 * step)
    finally:
        policy.set_params(theta)
    if not np.all(np.isfinite(numeric)):
        raise FloatingPointError("finite-difference gradient is not finite")

    mask = np.abs(analytic) > 1e-8
    if not mask.any():
        return 0.0
    rel = np.abs(analytic[mask] - numeric[mask]) / np.abs(analytic[mask])
    return float(rel.max())
