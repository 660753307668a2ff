"""FactWorld: a synthetic captioning environment with an exact oracle judge.

An episode is a hidden set of fact tokens (the scene) plus a reference
length. The policy emits a caption one token per position, choosing among
the episode's fact slots, hallucination tokens (distractors), non-pointable
commentary tokens (meta), and a stop action. The oracle judge scores the
emission with the same rules in both directions:

* an emitted token is a verified assertion iff it is pointable (not a meta
  token) and actually in the episode's fact set — distractors fail visual
  verification, meta tokens fail pointability;
* a fact is covered iff it was emitted (exact identity matching);
* linguistic scores are a repetition proxy: each of the three scores is
  ``round(1 + 9 * (1 - repeated_fraction))`` with
  ``repeated_fraction = (emissions - distinct) / max(emissions, 1)``.

The trainer runs the full pipeline: sample rollout groups, score them,
length-gate the linguistic reward, estimate advantages (summed baseline or
decoupled), and take one ascent step on the clipped objective. Everything
is deterministic given the config seed; per-rollout RNG streams are derived
from (seed, step, episode, rollout) so results do not depend on evaluation
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .advantages import (
    GroupRewardMatrix,
    NormConfig,
    RewardWeights,
    batch_normalize,
    cgdpo_advantages,
    grpo_summed_advantages,
)
from .errors import TrainingDiverged, ValidationError
from .objective import (
    TOKEN_SUM_SEQUENCE_MEAN,
    ClipConfig,
    Rollout,
    RolloutBatch,
    batch_objective,
    batch_objective_gradient,
)
from .rewards import (
    JudgeReport,
    AssertionVerdict,
    LengthGate,
    LinearPenaltyConfig,
    ReferenceVerdict,
    RewardVector,
    apply_length_gate,
    b_capscore,
    score_report,
)

OPTIMIZER_GRPO_SUMMED = "grpo_summed"
OPTIMIZER_CGDPO = "cgdpo"
OPTIMIZER_KINDS = (OPTIMIZER_GRPO_SUMMED, OPTIMIZER_CGDPO)

# seed-stream domains, so training and evaluation never share an RNG stream
_TRAIN_DOMAIN = 0
_EVAL_DOMAIN = 1


@dataclass(frozen=True)
class FactWorldSpec:
    """Environment definition: vocabularies and per-episode shape."""

    fact_vocab: frozenset[str]
    distractor_vocab: frozenset[str]
    meta_vocab: frozenset[str]
    facts_per_episode: int = 8
    max_emit_length: int = 24
    reference_length: int = 16

    def __post_init__(self) -> None:
        for name in ("fact_vocab", "distractor_vocab", "meta_vocab"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
            if not getattr(self, name):
                raise ValidationError(f"{name} must be non-empty")
        if (
            self.fact_vocab & self.distractor_vocab
            or self.fact_vocab & self.meta_vocab
            or self.distractor_vocab & self.meta_vocab
        ):
            raise ValidationError("vocabularies must be pairwise disjoint")
        if not 1 <= self.facts_per_episode <= len(self.fact_vocab):
            raise ValidationError(
                f"facts_per_episode must be in 1..{len(self.fact_vocab)}"
            )
        if self.max_emit_length < 1:
            raise ValidationError("max_emit_length must be at least 1")
        if self.reference_length < 1:
            raise ValidationError("reference_length must be at least 1")


def default_world() -> FactWorldSpec:
    """Desk-scale defaults: 40 facts, 40 distractors, 20 meta tokens."""
    return FactWorldSpec(
        fact_vocab=frozenset(f"fact{i:02d}" for i in range(40)),
        distractor_vocab=frozenset(f"lure{i:02d}" for i in range(40)),
        meta_vocab=frozenset(f"meta{i:02d}" for i in range(20)),
    )


@dataclass(frozen=True)
class Episode:
    """One prompt: the ground-truth fact set (ordered) and reference length."""

    facts: tuple[str, ...]
    reference_length: int
    meta_vocab: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "facts", tuple(self.facts))
        if len(set(self.facts)) != len(self.facts):
            raise ValidationError("episode facts must be distinct")


def sample_episode(spec: FactWorldSpec, seed) -> Episode:
    """Draw the episode's fact set; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    pool = sorted(spec.fact_vocab)
    idx = rng.permutation(len(pool))[: spec.facts_per_episode]
    return Episode(
        facts=tuple(pool[i] for i in idx),
        reference_length=spec.reference_length,
        meta_vocab=spec.meta_vocab,
    )


# ---------------------------------------------------------------------------
# Oracle judging (shared with the mock judge in the judge module)


def _repetition_scores(emitted: Sequence[str]) -> int:
    n = len(emitted)
    repeated = (n - len(set(emitted))) / max(n, 1)
    # round-half-up keeps the score monotone in the repeated fraction
    return int(np.floor(1.0 + 9.0 * (1.0 - repeated) + 0.5))


def structured_caption_report(
    emitted: Sequence[str],
    reference_units: Sequence[str],
    meta_vocab: frozenset[str] = frozenset(),
) -> JudgeReport:
    """Exact-identity judging of a token caption against reference units.

    This is the single source of truth for the oracle rules; the
    environment's ``oracle_judge`` and the judge module's ``mock_judge``
    both delegate here.
    """
    refs: list[str] = []
    seen = set()
    for unit in reference_units:
        if unit not in seen:
            refs.append(unit)
            seen.add(unit)
    emitted_set = set(emitted)
    assertions = tuple(
        AssertionVerdict(tok, tok not in meta_vocab and tok in seen) for tok in emitted
    )
    references = tuple(ReferenceVerdict(u, u in emitted_set) for u in refs)
    score = _repetition_scores(emitted)
    return JudgeReport(
        assertions=assertions,
        references=references,
        clarity=score,
        fluency=score,
        coherency=score,
        explanation="exact-match oracle; linguistic scores from repetition fraction",
    )


@dataclass(frozen=True)
class ConditionVerdict:
    """Per-assertion breakdown of the two verification conditions."""

    text: str
    pointable: bool
    visually_verified: bool

    @property
    def verified(self) -> bool:
        return self.pointable and self.visually_verified


def verify_conditions(
    emitted: Sequence[str],
    reference_units: Sequence[str],
    meta_vocab: frozenset[str] = frozenset(),
) -> tuple[ConditionVerdict, ...]:
    """The internal two-condition flags behind each assertion verdict."""
    refs = set(reference_units)
    return tuple(
        ConditionVerdict(
            text=tok,
            pointable=tok not in meta_vocab,
            visually_verified=tok in refs,
        )
        for tok in emitted
    )


def oracle_judge(episode: Episode, emitted: Sequence[str]) -> JudgeReport:
    """Judge an emission against the episode's ground truth."""
    return structured_caption_report(emitted, episode.facts, episode.meta_vocab)


# ---------------------------------------------------------------------------
# Action space and policy


@dataclass(frozen=True)
class ActionSpace:
    """Per-position action layout: fact slots, distractors, metas, stop (last)."""

    fact_slots: int
    distractors: tuple[str, ...]
    metas: tuple[str, ...]

    @property
    def size(self) -> int:
        return self.fact_slots + len(self.distractors) + len(self.metas) + 1

    @property
    def stop_index(self) -> int:
        return self.size - 1

    def token_for(self, episode: Episode, action: int) -> str | None:
        """Token emitted by an action; None for stop."""
        if action < 0 or action >= self.size:
            raise ValidationError(f"action {action} out of range 0..{self.size - 1}")
        if action < self.fact_slots:
            return episode.facts[action]
        action -= self.fact_slots
        if action < len(self.distractors):
            return self.distractors[action]
        action -= len(self.distractors)
        if action < len(self.metas):
            return self.metas[action]
        return None

    def tokens_for(self, episode: Episode, actions: Sequence[int]) -> tuple[str, ...]:
        out = []
        for a in actions:
            tok = self.token_for(episode, a)
            if tok is not None:
                out.append(tok)
        return tuple(out)


def action_space(spec: FactWorldSpec) -> ActionSpace:
    return ActionSpace(
        fact_slots=spec.facts_per_episode,
        distractors=tuple(sorted(spec.distractor_vocab)),
        metas=tuple(sorted(spec.meta_vocab)),
    )


class ToyPolicy:
    """Per-position categorical policy backed by one logit table.

    Small enough for exact gradients: parameter (t, a) is the logit of
    action ``a`` at emission position ``t``. Satisfies the duck-typed
    policy interface of the objective module.
    """

    def __init__(self, n_positions: int, n_actions: int):
        if n_positions < 1:
            raise ValidationError("need at least one emission position")
        if n_actions < 2:
            raise ValidationError("need at least two actions (emit + stop)")
        self._table = np.zeros((n_positions, n_actions), dtype=np.float64)
        self._logp_cache: np.ndarray | None = None

    @classmethod
    def for_world(cls, spec: FactWorldSpec) -> "ToyPolicy":
        return cls(spec.max_emit_length, action_space(spec).size)

    @property
    def n_positions(self) -> int:
        return self._table.shape[0]

    @property
    def n_actions(self) -> int:
        return self._table.shape[1]

    @property
    def n_params(self) -> int:
        return self._table.size

    def get_params(self) -> np.ndarray:
        return self._table.ravel().copy()

    def set_params(self, flat: np.ndarray) -> None:
        v = np.asarray(flat, dtype=np.float64)
        if v.shape != (self._table.size,):
            raise ValidationError(
                f"expected {self._table.size} parameters, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("parameters must be finite")
        self._table = v.reshape(self._table.shape).copy()
        self._logp_cache = None

    def _logps(self) -> np.ndarray:
        if self._logp_cache is None:
            t = self._table
            m = t.max(axis=1, keepdims=True)
            lse = m + np.log(np.exp(t - m).sum(axis=1, keepdims=True))
            self._logp_cache = t - lse
        return self._logp_cache

    def log_prob_table(self) -> np.ndarray:
        """(n_positions, n_actions) log-probabilities under current parameters."""
        return self._logps().copy()

    def _check_actions(self, actions: Sequence[int]) -> np.ndarray:
        a = np.asarray(actions, dtype=np.intp)
        if a.ndim != 1 or a.shape[0] > self.n_positions:
            raise ValidationError(
                f"need between 0 and {self.n_positions} actions, got shape {a.shape}"
            )
        if a.size and (a.min() < 0 or a.max() >= self.n_actions):
            raise ValidationError("action index out of range")
        return a

    def action_logps(self, actions: Sequence[int]) -> np.ndarray:
        a = self._check_actions(actions)
        return self._logps()[np.arange(a.shape[0]), a].copy()

    def action_logp_grads(self, actions: Sequence[int]) -> np.ndarray:
        """(T, n_params) Jacobian; position t only touches its own logit row."""
        a = self._check_actions(actions)
        t = a.shape[0]
        probs = np.exp(self._logps()[:t])
        grads = np.zeros((t, self.n_positions, self.n_actions))
        rows = np.arange(t)
        grads[rows, rows, :] = -probs
        grads[rows, rows, a] += 1.0
        return grads.reshape(t, self.n_params)


@dataclass(frozen=True)
class SampledRollout:
    """Actions (stop included if taken), their log-probs, and emitted tokens."""

    actions: tuple[int, ...]
    logps: np.ndarray
    tokens: tuple[str, ...]


def sample_rollout(
    policy: ToyPolicy,
    space: ActionSpace,
    episode: Episode,
    rng: np.random.Generator,
    greedy: bool = False,
) -> SampledRollout:
    lp = policy.log_prob_table()
    return _rollout_from_table(lp, np.exp(lp), space, episode, rng, greedy)


def _rollout_from_table(
    lp: np.ndarray,
    probs: np.ndarray,
    space: ActionSpace,
    episode: Episode,
    rng: np.random.Generator,
    greedy: bool = False,
) -> SampledRollout:
    cum = np.cumsum(probs, axis=1)
    actions: list[int] = []
    for t in range(lp.shape[0]):
        if greedy:
            a = int(np.argmax(lp[t]))
        else:
            u = rng.random() * cum[t, -1]
            a = int(np.searchsorted(cum[t], u, side="right"))
            if a >= lp.shape[1]:
                a = lp.shape[1] - 1
        actions.append(a)
        if a == space.stop_index:
            break
    logps = lp[np.arange(len(actions)), actions]
    return SampledRollout(
        actions=tuple(actions),
        logps=logps,
        tokens=space.tokens_for(episode, actions),
    )


# ---------------------------------------------------------------------------
# Training


def _default_weights() -> RewardWeights:
    return RewardWeights(np.array([0.1, 0.3, 0.3]))


@dataclass(frozen=True)
class TrainerConfig:
    """Knobs for the desk-scale trainer (defaults follow the paper-scale setup
    where one exists: 8 rollouts per group, weights (0.1, 0.3, 0.3), gate
    (0.5, 2))."""

    optimizer_kind: str = OPTIMIZER_CGDPO
    group_size: int = 8
    learning_rate: float = 0.5
    steps: int = 500
    weights: RewardWeights = field(default_factory=_default_weights)
    gate: LengthGate = field(default_factory=LengthGate)
    penalty: LinearPenaltyConfig | None = None
    clip: ClipConfig = field(default_factory=ClipConfig)
    seed: int = 0
    episodes_per_step: int = 4

    def __post_init__(self) -> None:
        if self.optimizer_kind not in OPTIMIZER_KINDS:
            raise ValidationError(
                f"optimizer_kind must be one of {OPTIMIZER_KINDS}, got {self.optimizer_kind!r}"
            )
        if self.group_size < 2:
            raise ValidationError("group_size must be at least 2")
        if self.steps < 1:
            raise ValidationError("steps must be at least 1")
        # learning_rate 0 is allowed so a no-op run can serve as a control
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if len(self.weights) != 3:
            raise ValidationError("need exactly 3 reward weights")
        if self.episodes_per_step < 1:
            raise ValidationError("episodes_per_step must be at least 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


@dataclass(frozen=True)
class StepStats:
    step: int
    precision: float
    recall: float
    linguistic: float
    bcapscore: float
    mean_len: float
    objective: float


@dataclass(frozen=True)
class TrainingTrace:
    optimizer_kind: str
    seed: int
    rows: tuple[StepStats, ...]


TRACE_CSV_HEADER = "step,precision,recall,linguistic,bcapscore,mean_len,objective"


def trace_to_csv(trace: TrainingTrace) -> str:
    lines = [TRACE_CSV_HEADER]
    for r in trace.rows:
        lines.append(
            f"{r.step},{r.precision!r},{r.recall!r},{r.linguistic!r},"
            f"{r.bcapscore!r},{r.mean_len!r},{r.objective!r}"
        )
    return "\n".join(lines) + "\n"


def trace_to_json(trace: TrainingTrace) -> str:
    doc = {
        "optimizer_kind": trace.optimizer_kind,
        "seed": trace.seed,
        "rows": [
            {
                "step": r.step,
                "precision": r.precision,
                "recall": r.recall,
                "linguistic": r.linguistic,
                "bcapscore": r.bcapscore,
                "mean_len": r.mean_len,
                "objective": r.objective,
            }
            for r in trace.rows
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _penalty_for_length(length: int, reference_length: int, cfg: LinearPenaltyConfig) -> float:
    rho = length / reference_length
    if rho <= 0.0:
        return cfg.lambda_len * cfg.tau_lower  # continuous limit at rho -> 0
    deviation = max(rho - cfg.tau_upper, 0.0) + max(cfg.tau_lower - rho, 0.0)
    return cfg.lambda_len * deviation


def train(spec: FactWorldSpec, policy: ToyPolicy, cfg: TrainerConfig) -> TrainingTrace:
    """Run the reward -> mask -> advantage -> objective pipeline.

    Mutates ``policy`` in place and returns the per-step trace. Fully
    deterministic given ``cfg`` (including the seed).
    """
    space = action_space(spec)
    if policy.n_positions != spec.max_emit_length or policy.n_actions != space.size:
        raise ValidationError(
            "policy shape does not match the environment "
            f"(expected {spec.max_emit_length} x {space.size})"
        )
    norm = NormConfig()
    rows: list[StepStats] = []
    n_group = cfg.group_size

    for step in range(cfg.steps):
        lp = policy.log_prob_table()  # old-policy snapshot for this step
        probs = np.exp(lp)

        sampled: list[SampledRollout] = []
        lengths: list[int] = []
        reward_rows: list[np.ndarray] = []
        group_advs: list[np.ndarray] = []

        for ep_i in range(cfg.episodes_per_step):
            episode = sample_episode(spec, [cfg.seed, _TRAIN_DOMAIN, step, ep_i, 0])
            matrix = np.empty((n_group, 3))
            for r_i in range(n_group):
                rng = np.random.default_rng([cfg.seed, _TRAIN_DOMAIN, step, ep_i, 1 + r_i])
                ro = _rollout_from_table(lp, probs, space, episode, rng)
                scored = score_report(oracle_judge(episode, ro.tokens))
                masked = apply_length_gate(
                    scored.rewards.linguistic,
                    len(ro.tokens),
                    episode.reference_length,
                    cfg.gate,
                )
                matrix[r_i] = (scored.rewards.precision, scored.rewards.recall, masked)
                sampled.append(ro)
                lengths.append(len(ro.tokens))
            reward_rows.append(matrix)
            group = GroupRewardMatrix(matrix)
            if cfg.optimizer_kind == OPTIMIZER_CGDPO:
                group_advs.append(cgdpo_advantages(group, cfg.weights, norm))
            else:
                group_advs.append(grpo_summed_advantages(group, cfg.weights, norm))

        advantages = np.concatenate(group_advs)
        if cfg.optimizer_kind == OPTIMIZER_CGDPO:
            advantages = batch_normalize(advantages, norm)
        if cfg.penalty is not None:
            advantages = advantages - np.array(
                [
                    _penalty_for_length(n, spec.reference_length, cfg.penalty)
                    for n in lengths
                ]
            )

        batch = RolloutBatch(
            tuple(
                Rollout(
                    actions=ro.actions,
                    logp_old=ro.logps,
                    logp_new=ro.logps,
                    advantage=float(adv),
                )
                for ro, adv in zip(sampled, advantages)
            )
        )
        objective = batch_objective(policy, batch, cfg.clip, TOKEN_SUM_SEQUENCE_MEAN)
        if not np.isfinite(objective):
            raise TrainingDiverged(
                f"objective became non-finite at step {step}: {objective!r}; "
                f"max |param| = {np.abs(policy.get_params()).max():.3e}"
            )
        if cfg.learning_rate > 0:
            grad = batch_objective_gradient(policy, batch, cfg.clip, TOKEN_SUM_SEQUENCE_MEAN)
            policy.set_params(policy.get_params() + cfg.learning_rate * grad)

        all_rewards = np.vstack(reward_rows)
        bcaps = [
            b_capscore(RewardVector(p, r, l)) for p, r, l in all_rewards
        ]
        rows.append(
            StepStats(
                step=step,
                precision=float(all_rewards[:, 0].mean()),
                recall=float(all_rewards[:, 1].mean()),
                linguistic=float(all_rewards[:, 2].mean()),
                bcapscore=float(np.mean(bcaps)),
                mean_len=float(np.mean(lengths)),
                objective=float(objective),
            )
        )

    return TrainingTrace(optimizer_kind=cfg.optimizer_kind, seed=cfg.seed, rows=tuple(rows))


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalSummary:
    """Mean rewards (linguistic length-gated), composite score, and lengths."""

    rewards: RewardVector
    bcapscore: float
    mean_length: float
    degenerate_rollouts: int
    n_episodes: int


def evaluate_policy(
    spec: FactWorldSpec,
    policy: ToyPolicy,
    n_episodes: int,
    seed: int,
    greedy: bool = False,
    gate: LengthGate = LengthGate(),
) -> EvalSummary:
    """Score the policy on fresh episodes; deterministic for a fixed seed."""
    if n_episodes < 1:
        raise ValidationError("n_episodes must be at least 1")
    space = action_space(spec)
    lp = policy.log_prob_table()
    probs = np.exp(lp)
    rewards = np.empty((n_episodes, 3))
    lengths = np.empty(n_episodes)
    bcaps = np.empty(n_episodes)
    degenerate = 0
    for i in range(n_episodes):
        episode = sample_episode(spec, [seed, _EVAL_DOMAIN, i, 0])
        rng = np.random.default_rng([seed, _EVAL_DOMAIN, i, 1])
        ro = _rollout_from_table(lp, probs, space, episode, rng, greedy)
        scored = score_report(oracle_judge(episode, ro.tokens))
        if scored.no_assertions or scored.no_references:
            degenerate += 1
        masked = apply_length_gate(
            scored.rewards.linguistic, len(ro.tokens), episode.reference_length, gate
        )
        rewards[i] = (scored.rewards.precision, scored.rewards.recall, masked)
        lengths[i] = len(ro.tokens)
        bcaps[i] = b_capscore(
            RewardVector(scored.rewards.precision, scored.rewards.recall, masked)
        )
    return EvalSummary(
        rewards=RewardVector(
            float(rewards[:, 0].mean()),
            float(rewards[:, 1].mean()),
            float(rewards[:, 2].mean()),
        ),
        bcapscore=float(bcaps.mean()),
        mean_length=float(lengths.mean()),
        degenerate_rollouts=degenerate,
        n_episodes=n_episodes,
    )
