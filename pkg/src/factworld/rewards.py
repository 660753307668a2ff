"""Scalar caption rewards, length gating, and composite scoring.

Three reward channels are computed from a judge report: precision (share of
verified assertions), recall (share of covered reference units), and
linguistic quality (mean of three 1-10 scores mapped onto [0, 1]). The
length gate zeroes the linguistic reward outside an acceptable
predicted-to-reference length ratio; the linear penalty is the alternative
soft constraint that callers subtract from a normalized advantage.

Everything in this module is a pure function of its inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError


class DegenerateReportWarning(UserWarning):
    """A report with no assertions or no references was scored worst-case 0."""


@dataclass(frozen=True)
class AssertionVerdict:
    """One atomic claim from the evaluated caption plus its verification flag."""

    text: str
    verified: bool

    def __post_init__(self) -> None:
        if not self.text:
            raise ValidationError("assertion text must be non-empty")


@dataclass(frozen=True)
class ReferenceVerdict:
    """One reference unit plus whether the evaluated caption covers it."""

    text: str
    covered: bool

    def __post_init__(self) -> None:
        if not self.text:
            raise ValidationError("reference text must be non-empty")


def _check_score(name: str, value: int) -> None:
    if not 1 <= value <= 10:
        raise ValidationError(f"{name} must be in 1..10, got {value!r}")


@dataclass(frozen=True)
class JudgeReport:
    """Parsed judge output: verdict lists plus the three linguistic scores."""

    assertions: tuple[AssertionVerdict, ...]
    references: tuple[ReferenceVerdict, ...]
    clarity: int
    fluency: int
    coherency: int
    explanation: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "assertions", tuple(self.assertions))
        object.__setattr__(self, "references", tuple(self.references))
        for name in ("clarity", "fluency", "coherency"):
            _check_score(name, getattr(self, name))


@dataclass(frozen=True)
class RewardVector:
    """The three unit-interval rewards for one rollout."""

    precision: float
    recall: float
    linguistic: float

    def __post_init__(self) -> None:
        for name in ("precision", "recall", "linguistic"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v!r}")


@dataclass(frozen=True)
class LengthGate:
    """Acceptable band for the predicted/reference length ratio."""

    tau_lower: float = 0.5
    tau_upper: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_lower < self.tau_upper:
            raise ValidationError(
                f"need 0 < tau_lower < tau_upper, got ({self.tau_lower}, {self.tau_upper})"
            )


@dataclass(frozen=True)
class LinearPenaltyConfig:
    """Linear penalty on length-ratio deviation from [tau_lower, tau_upper]."""

    tau_lower: float = 0.5
    tau_upper: float = 2.0
    lambda_len: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_lower < self.tau_upper:
            raise ValidationError(
                f"need 0 < tau_lower < tau_upper, got ({self.tau_lower}, {self.tau_upper})"
            )
        if self.lambda_len < 0.0:
            raise ValidationError("lambda_len must be non-negative")


def precision_from_report(report: JudgeReport) -> float:
    """Share of assertions that passed verification.

    An empty assertion list scores 0 and emits :class:`DegenerateReportWarning`
    instead of raising, so a malformed rollout gets worst-case reward rather
    than aborting a training step.
    """
    n = len(report.assertions)
    if n == 0:
        warnings.warn(
            "report has no assertions; precision scored 0",
            DegenerateReportWarning,
            stacklevel=2,
        )
        return 0.0
    return sum(a.verified for a in report.assertions) / n


def recall_from_report(report: JudgeReport) -> float:
    """Share of reference units covered by the caption (0 and a warning if
    the reference list is empty)."""
    m = len(report.references)
    if m == 0:
        warnings.warn(
            "report has no references; recall scored 0",
            DegenerateReportWarning,
            stacklevel=2,
        )
        return 0.0
    return sum(r.covered for r in report.references) / m


def linguistic_from_report(report: JudgeReport) -> float:
    """Mean of the three linguistic scores, each mapped from {1..10} onto [0, 1]."""
    scores = (report.clarity, report.fluency, report.coherency)
    for name, s in zip(("clarity", "fluency", "coherency"), scores):
        _check_score(name, s)
    return sum((s - 1) / 9 for s in scores) / 3


@dataclass(frozen=True)
class ScoredReport:
    """Reward vector for one report plus degenerate-input flags."""

    rewards: RewardVector
    no_assertions: bool
    no_references: bool


def score_report(report: JudgeReport) -> ScoredReport:
    """All three rewards at once, with degenerate cases flagged rather than warned."""
    no_assertions = not report.assertions
    no_references = not report.references
    precision = (
        0.0 if no_assertions else sum(a.verified for a in report.assertions) / len(report.assertions)
    )
    recall = (
        0.0 if no_references else sum(r.covered for r in report.references) / len(report.references)
    )
    return ScoredReport(
        rewards=RewardVector(precision, recall, linguistic_from_report(report)),
        no_assertions=no_assertions,
        no_references=no_references,
    )


def apply_length_gate(
    r_ling: float, len_pred: float, len_ref: float, gate: LengthGate
) -> float:
    """Mask the linguistic reward to 0 when the length ratio leaves the gate band.

    Both band edges are inclusive. Idempotent: output is either ``r_ling`` or 0.
    """
    if len_ref <= 0:
        raise ValidationError(f"reference length must be positive, got {len_ref!r}")
    rho = len_pred / len_ref
    return r_ling if gate.tau_lower <= rho <= gate.tau_upper else 0.0


def linear_length_penalty(rho: float, cfg: LinearPenaltyConfig) -> float:
    """Penalty lambda * (max(rho - tau_upper, 0) + max(tau_lower - rho, 0)).

    Callers subtract the returned value from a normalized advantage.
    """
    if rho <= 0:
        raise ValidationError(f"length ratio must be positive, got {rho!r}")
    deviation = max(rho - cfg.tau_upper, 0.0) + max(cfg.tau_lower - rho, 0.0)
    return cfg.lambda_len * deviation


def b_capscore(r: RewardVector) -> float:
    """Harmonic mean of the three rewards; 0 if any component is 0."""
    if r.precision == 0.0 or r.recall == 0.0 or r.linguistic == 0.0:
        return 0.0
    return 3.0 / (1.0 / r.precision + 1.0 / r.recall + 1.0 / r.linguistic)


def whitespace_token_count(text: str) -> int:
    """Default token counter for length ratios: whitespace-delimited words."""
    return len(text.split())


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(x, kind="stable")
    sx = x[order]
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    counts = np.diff(np.r_[starts, len(sx)])
    group_rank = starts + 1 + (counts - 1) / 2.0
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.repeat(group_rank, counts)
    return ranks


def spearman_rank(scores_a: Sequence[float], scores_b: Sequence[float]) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValidationError("score lists must be one-dimensional")
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise ValidationError("need at least two scores to rank")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("scores must be finite")
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0.0:
        raise ValidationError("constant input has no ranking")
    return float(np.clip((ra * rb).sum() / denom, -1.0, 1.0))
