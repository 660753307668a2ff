"""Group-relative advantage estimation for multi-reward rollout groups.

Two estimators are provided. The summed baseline aggregates the reward
vector into one scalar per rollout and group-normalizes those scalars, so
any two reward vectors with equal weighted sums receive identical
advantages no matter how the rewards trade off. The decoupled estimator
normalizes each reward dimension separately across the group and then takes
the weighted sum of the normalized deviations, which keeps those trade-offs
distinguishable. ``collapse_diagnostic`` and ``collapse_grid`` measure the
difference directly.

Normalization conventions: group-level normalization returns exact zeros
for a zero-variance group (or dimension) instead of dividing by an epsilon;
batch-level normalization always uses the epsilon-guarded denominator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ValidationError

AGGREGATE_MATCH_TOL = 1e-12


def _as_matrix(values) -> np.ndarray:
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"reward matrix must be 2-D, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class GroupRewardMatrix:
    """G x K rewards for one prompt's rollout group (G rollouts, K reward dims)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        m = _as_matrix(self.values)
        if m.shape[0] < 2:
            raise ValidationError(f"need at least 2 rollouts, got {m.shape[0]}")
        if m.shape[1] < 1:
            raise ValidationError("need at least 1 reward dimension")
        if not np.all(np.isfinite(m)):
            raise ValidationError("reward matrix entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "values", m)

    @property
    def group_size(self) -> int:
        return self.values.shape[0]

    @property
    def n_rewards(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RewardWeights:
    """Non-negative aggregation weights, used as given (not renormalized)."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] < 1:
            raise ValidationError("weights must be a non-empty 1-D vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and non-negative")
        if not np.any(w > 0):
            raise ValidationError("weights must not all be zero")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class NormConfig:
    """Normalization settings: epsilon guards the batch-level denominator."""

    epsilon: float = 1e-8
    std_kind: str = "population"

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.std_kind != "population":
            raise ValidationError(f"unsupported std_kind {self.std_kind!r}")


def _check_dims(m: GroupRewardMatrix, w: RewardWeights) -> None:
    if len(w) != m.n_rewards:
        raise ValidationError(
            f"weight length {len(w)} does not match reward dimensions {m.n_rewards}"
        )


def group_stats(m: GroupRewardMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension (mean, population std) across the rollout group."""
    return kernels.group_mean_std(np.array(m.values))


def grpo_summed_advantages(
    m: GroupRewardMatrix, w: RewardWeights, cfg: NormConfig = NormConfig()
) -> np.ndarray:
    """Advantages of the weighted reward sums, group-normalized.

    A zero-variance group yields all zeros.
    """
    _check_dims(m, w)
    return kernels.grpo_advantages(np.array(m.values), np.array(w.weights))


def cgdpo_advantages(
    m: GroupRewardMatrix, w: RewardWeights, cfg: NormConfig = NormConfig()
) -> np.ndarray:
    """Weighted sum of per-dimension group-normalized deviations.

    Zero-variance dimensions contribute 0 for all rollouts.
    """
    _check_dims(m, w)
    return kernels.cgdpo_advantages(np.array(m.values), np.array(w.weights))


def batch_normalize(advantages: Sequence[float], cfg: NormConfig = NormConfig()) -> np.ndarray:
    """Normalize advantages over the whole batch with an epsilon-guarded std."""
    a = np.ascontiguousarray(advantages, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] == 0:
        raise ValidationError("advantages must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(a)):
        raise ValidationError("advantages must be finite")
    if np.all(a == a[0]):
        return np.zeros(a.shape[0])
    mu = a.mean()
    sd = np.sqrt(np.mean((a - mu) ** 2))
    return (a - mu) / (sd + cfg.epsilon)


@dataclass(frozen=True)
class CollapseReport:
    """Advantage spreads for reward-vector pairs with equal weighted sums."""

    pair_indices: tuple[int, ...]
    grpo_spreads: tuple[float, ...]
    cgdpo_spreads: tuple[float, ...]

    @property
    def max_grpo_spread(self) -> float:
        return max(self.grpo_spreads, default=0.0)

    @property
    def max_cgdpo_spread(self) -> float:
        return max(self.cgdpo_spreads, default=0.0)


def collapse_diagnostic(
    m: GroupRewardMatrix,
    w: RewardWeights,
    cfg: NormConfig,
    pairs: Sequence[tuple[Sequence[float], Sequence[float]]],
) -> CollapseReport:
    """Measure how far each estimator separates equal-aggregate reward pairs.

    Each pair is substituted, one vector at a time, as rollout 1 of ``m``;
    the spread is the absolute difference between the two resulting
    rollout-1 advantages. Pairs must have equal weighted aggregates within
    ``AGGREGATE_MATCH_TOL``.
    """
    _check_dims(m, w)
    weights = np.array(w.weights)
    base = np.array(m.values)
    grpo_spreads: list[float] = []
    cgdpo_spreads: list[float] = []
    for idx, (ra, rb) in enumerate(pairs):
        va = np.asarray(ra, dtype=np.float64)
        vb = np.asarray(rb, dtype=np.float64)
        if va.shape != (m.n_rewards,) or vb.shape != (m.n_rewards,):
            raise ValidationError(f"pair {idx} does not match the reward dimension")
        if abs(float(va @ weights - vb @ weights)) > AGGREGATE_MATCH_TOL:
            raise ValidationError(
                f"pair {idx} has unequal weighted aggregates: "
                f"{float(va @ weights)!r} vs {float(vb @ weights)!r}"
            )
        adv = []
        for vec in (va, vb):
            trial = base.copy()
            trial[0] = vec
            adv.append(
                (
                    kernels.grpo_advantages(trial, weights)[0],
                    kernels.cgdpo_advantages(trial, weights)[0],
                )
            )
        grpo_spreads.append(abs(adv[0][0] - adv[1][0]))
        cgdpo_spreads.append(abs(adv[0][1] - adv[1][1]))
    return CollapseReport(
        pair_indices=tuple(range(len(grpo_spreads))),
        grpo_spreads=tuple(grpo_spreads),
        cgdpo_spreads=tuple(cgdpo_spreads),
    )


DEFAULT_FIXED_ROLLOUTS = ((0.20, 0.85), (0.82, 0.18))


@dataclass(frozen=True)
class AdvantageGrid:
    """Flat row-major grid of rollout-1 advantages over [0, 1]^2."""

    xs: np.ndarray
    ys: np.ndarray
    grpo: np.ndarray
    cgdpo: np.ndarray
    resolution: int

    def rows(self):
        """Yield (x, y, grpo_adv, cgdpo_adv) tuples in deterministic order."""
        for i in range(self.xs.shape[0]):
            yield (
                float(self.xs[i]),
                float(self.ys[i]),
                float(self.grpo[i]),
                float(self.cgdpo[i]),
            )


def collapse_grid(
    fixed: Sequence[Sequence[float]] = DEFAULT_FIXED_ROLLOUTS,
    w: RewardWeights | None = None,
    resolution: int = 101,
    cfg: NormConfig = NormConfig(),
) -> AdvantageGrid:
    """Sweep rollout 1 over [0, 1]^2 against fixed competitors.

    Points with equal weighted sums expose the summed estimator's collapse:
    they land on the same anti-diagonal and receive identical advantages,
    while the decoupled estimator still separates them.
    """
    if w is None:
        w = RewardWeights(np.array([1.0, 1.0]))
    if len(w) != 2:
        raise ValidationError("the collapse grid is defined for K = 2 rewards")
    f = _as_matrix(fixed)
    if f.shape[0] < 2:
        raise ValidationError("need at least 2 fixed rollouts")
    if f.shape[1] != 2:
        raise ValidationError("fixed rollouts must be 2-D reward vectors")
    if not np.all(np.isfinite(f)):
        raise ValidationError("fixed rollouts must be finite")
    if np.all(f == f[0]):
        raise ValidationError(
            "fixed rollouts are all identical (zero group variance in both dimensions)"
        )
    if resolution < 1:
        raise ValidationError("resolution must be a positive integer")

    axis = np.linspace(0.0, 1.0, resolution)
    xs = np.repeat(axis, resolution)
    ys = np.tile(axis, resolution)
    candidates = np.ascontiguousarray(np.column_stack([xs, ys]))
    grpo, cgdpo = kernels.rollout1_surface(candidates, f, np.array(w.weights))
    return AdvantageGrid(xs=xs, ys=ys, grpo=grpo, cgdpo=cgdpo, resolution=resolution)


def grid_bucket_spreads(grid: AdvantageGrid, bucket_tol: float = 1e-10) -> tuple[float, float]:
    """Max within-bucket advantage spreads, bucketing points by aggregate x + y.

    Returns (max summed-estimator spread, max decoupled spread). The summed
    spread should be ~0: equal aggregates are indistinguishable to it.
    """
    keys = np.round((grid.xs + grid.ys) / bucket_tol).astype(np.int64)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    boundaries = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    ends = np.r_[boundaries[1:], len(sorted_keys)]
    max_grpo = 0.0
    max_cgdpo = 0.0
    for start, end in zip(boundaries, ends):
        if end - start < 2:
            continue
        sel = order[start:end]
        g = grid.grpo[sel]
        c = grid.cgdpo[sel]
        max_grpo = max(max_grpo, float(g.max() - g.min()))
        max_cgdpo = max(max_cgdpo, float(c.max() - c.min()))
    return max_grpo, max_cgdpo
