"""Group-relative trainer for the reflect loop.

One training step samples a failing world state, rolls out a group of G
outcomes, standardizes their rewards into advantages, and ascends a clipped
importance-weighted surrogate with an exact KL penalty to a phase-start
reference. Phase 1 varies the actor's proposal with the editor frozen;
phase 2 varies the editor's outcome with the actor frozen.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .policy import (
    ActorPolicy,
    exact_kl_gradient,
    log_prob_gradient,
    sample_action,
    snapshot_reference,
)
from .scenegraph import RequirementSet
from .seeding import derive_seed
from .simworld import (
    EditAction,
    EditKind,
    EditorModel,
    GenSpec,
    TRAINABLE_KINDS,
    WorldState,
    apply_edit_outcome,
    generate,
    oracle_check,
)


class GroupTooSmall(ValueError):
    """Raised when advantage standardization gets fewer than two rewards."""


class StateAlreadyPassing(ValueError):
    """Raised when a rollout group is requested for a state that already passes."""


class NonFiniteRatio(ArithmeticError):
    """Raised when an importance ratio overflows or is not a number."""


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip: float = 0.2
    kl_coefficient: float = 0.04
    learning_rate: float = 0.05
    steps: int = 1500
    seed: int = 0
    sigma_floor: float = 1e-6
    # how often the importance-ratio denominator snapshots the live policy;
    # 0 keeps it pinned to the phase start (which clips learning to +-clip)
    reference_refresh: int = 1

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group size must be at least 2")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if self.kl_coefficient < 0:
            raise ValueError("kl coefficient must be non-negative")
        if self.learning_rate < 0:
            # zero is allowed: a no-op run that leaves parameters untouched
            raise ValueError("learning rate must be non-negative")
        if self.sigma_floor <= 0:
            raise ValueError("sigma floor must be positive")
        if self.reference_refresh < 0:
            raise ValueError("reference_refresh must be non-negative")

    def to_config(self) -> dict:
        return {
            "group_size": self.group_size,
            "clip": self.clip,
            "kl_coefficient": self.kl_coefficient,
            "learning_rate": self.learning_rate,
            "steps": self.steps,
            "seed": self.seed,
            "sigma_floor": self.sigma_floor,
            "reference_refresh": self.reference_refresh,
        }

    @staticmethod
    def from_config(payload: dict) -> "GrpoConfig":
        return GrpoConfig(**payload)


@dataclass(frozen=True)
class GroupEntry:
    action: EditAction
    state_after: WorldState
    reward: float
    log_prob_live: float
    log_prob_ref: float
    applied: bool

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError("rewards must lie in [0, 1]")


@dataclass(frozen=True)
class RolloutGroup:
    state_before: WorldState
    reqs: RequirementSet
    entries: tuple[GroupEntry, ...]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise GroupTooSmall("rollout group needs at least two entries")

    @property
    def group_size(self) -> int:
        return len(self.entries)

    def rewards(self) -> np.ndarray:
        return np.array([entry.reward for entry in self.entries])


def compute_advantages(rewards, sigma_floor: float) -> np.ndarray:
    """Standardize rewards with the population deviation.

    Groups whose deviation falls below the floor carry no preference signal
    and yield all-zero advantages instead of an error.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size < 2:
        raise GroupTooSmall("advantages need at least two rewards")
    mean = rewards.mean()
    sigma = math.sqrt(float(np.mean((rewards - mean) ** 2)))
    if sigma < sigma_floor:
        return np.zeros_like(rewards)
    return (rewards - mean) / sigma


def collect_group_phase1(
    policy: ActorPolicy,
    editor: EditorModel,
    reqs: RequirementSet,
    state: WorldState,
    config: GrpoConfig,
    seed: int,
    reference: ActorPolicy | None = None,
) -> RolloutGroup:
    """G actor proposals under seeds seed+i, each applied by the frozen editor."""
    if oracle_check(state, reqs) >= 1.0:
        raise StateAlreadyPassing("phase-1 rollouts need a failing state")
    reference = reference or policy
    entries = []
    for i in range(config.group_size):
        entry_seed = seed + i
        action = sample_action(policy, state, reqs, derive_seed(entry_seed, "actor"))
        next_state, outcome = apply_edit_outcome(
            state, action, editor, derive_seed(entry_seed, "editor")
        )
        live, _ = log_prob_gradient(policy, state, reqs, action)
        ref, _ = log_prob_gradient(reference, state, reqs, action)
        entries.append(
            GroupEntry(
                action=action,
                state_after=next_state,
                reward=oracle_check(next_state, reqs),
                log_prob_live=live,
                log_prob_ref=ref,
                applied=outcome.applied,
            )
        )
    return RolloutGroup(state_before=state, reqs=reqs, entries=tuple(entries))


def _editor_outcome_log_prob(editor: EditorModel, action: EditAction, applied: bool):
    """log p(outcome) under the editor's Bernoulli success model, with gradient."""
    gradient = np.zeros(len(TRAINABLE_KINDS))
    if action.kind is EditKind.NOOP:
        return 0.0, gradient
    index = TRAINABLE_KINDS.index(action.kind)
    prob = editor.success_prob(action.kind)
    if applied:
        gradient[index] = 1.0 - prob
        return math.log(prob), gradient
    gradient[index] = -prob
    return math.log(1.0 - prob), gradient


def _editor_kl_gradient(
    editor: EditorModel, reference: EditorModel, action: EditAction
):
    gradient = np.zeros(len(TRAINABLE_KINDS))
    if action.kind is EditKind.NOOP:
        return 0.0, gradient
    index = TRAINABLE_KINDS.index(action.kind)
    p = editor.success_prob(action.kind)
    q = reference.success_prob(action.kind)
    kl = p * math.log(p / q) + (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    gradient[index] = p * (1.0 - p) * (
        math.log(p / q) - math.log((1.0 - p) / (1.0 - q))
    )
    return kl, gradient


def collect_group_phase2(
    policy: ActorPolicy,
    editor: EditorModel,
    reqs: RequirementSet,
    state: WorldState,
    config: GrpoConfig,
    seed: int,
    reference_editor: EditorModel | None = None,
) -> RolloutGroup:
    """One frozen-actor proposal, G independent editor outcomes under seeds seed+i."""
    if oracle_check(state, reqs) >= 1.0:
        raise StateAlreadyPassing("phase-2 rollouts need a failing state")
    reference_editor = reference_editor or editor
    action = sample_action(policy, state, reqs, derive_seed(seed, "actor"))
    entries = []
    for i in range(config.group_size):
        entry_seed = seed + i
        next_state, outcome = apply_edit_outcome(
            state, action, editor, derive_seed(entry_seed, "editor")
        )
        live, _ = _editor_outcome_log_prob(editor, action, outcome.applied)
        ref, _ = _editor_outcome_log_prob(reference_editor, action, outcome.applied)
        entries.append(
            GroupEntry(
                action=action,
                state_after=next_state,
                reward=oracle_check(next_state, reqs),
                log_prob_live=live,
                log_prob_ref=ref,
                applied=outcome.applied,
            )
        )
    return RolloutGroup(state_before=state, reqs=reqs, entries=tuple(entries))


def _surrogate_terms(group, advantages, config, live_log_probs, live_gradients):
    """Clipped surrogate mean and gradient; refs come from collection time."""
    dim = live_gradients[0].shape[0]
    total = 0.0
    gradient = np.zeros(dim)
    for entry, advantage, live_lp, live_grad in zip(
        group.entries, advantages, live_log_probs, live_gradients
    ):
        try:
            ratio = math.exp(live_lp - entry.log_prob_ref)
        except OverflowError as exc:
            raise NonFiniteRatio("importance ratio overflows") from exc
        if not math.isfinite(ratio):
            raise NonFiniteRatio(f"importance ratio {ratio!r} is not finite")
        clipped_ratio = min(max(ratio, 1.0 - config.clip), 1.0 + config.clip)
        unclipped = ratio * advantage
        clipped = clipped_ratio * advantage
        if unclipped <= clipped:
            total += unclipped
            gradient += advantage * ratio * live_grad
        else:
            total += clipped
            if 1.0 - config.clip <= ratio <= 1.0 + config.clip:
                gradient += advantage * ratio * live_grad
    n = group.group_size
    return total / n, gradient / n


def grpo_loss(group: RolloutGroup, live, reference, config: GrpoConfig):
    """Objective value (to be maximized) and its exact gradient.

    ``live``/``reference`` are either two ActorPolicy instances (phase 1,
    gradient over the policy weights) or two EditorModel instances (phase 2,
    gradient over the per-kind success logits). Importance ratios divide by
    the log-probabilities stored at collection time; ``reference`` anchors
    only the KL penalty.
    """
    advantages = compute_advantages(group.rewards(), config.sigma_floor)
    if isinstance(live, ActorPolicy):
        live_stats = [
            log_prob_gradient(live, group.state_before, group.reqs, entry.action)
            for entry in group.entries
        ]
        kl, kl_gradient = exact_kl_gradient(
            live, reference, group.state_before, group.reqs
        )
    elif isinstance(live, EditorModel):
        live_stats = [
            _editor_outcome_log_prob(live, entry.action, entry.applied)
            for entry in group.entries
        ]
        kl_terms = [
            _editor_kl_gradient(live, reference, entry.action)
            for entry in group.entries
        ]
        kl = sum(term[0] for term in kl_terms) / group.group_size
        kl_gradient = sum(term[1] for term in kl_terms) / group.group_size
    else:
        raise TypeError(f"cannot train parameters of {type(live).__name__}")
    surrogate, surrogate_gradient = _surrogate_terms(
        group,
        advantages,
        config,
        [s[0] for s in live_stats],
        [s[1] for s in live_stats],
    )
    loss = surrogate - config.kl_coefficient * kl
    gradient = surrogate_gradient - config.kl_coefficient * kl_gradient
    return loss, gradient


@dataclass(frozen=True)
class TrainingWorld:
    """What a training run sees of the simulator: prompts plus generation noise.

    Failing states are pre-generated into a fixed pool of ``pool_size``
    entries that training cycles through, mirroring a pipeline that renders
    its training images up front. Reward windows whose width divides the
    pool size therefore compare the same states, so trace statistics measure
    parameter improvement rather than state-mix luck.
    """

    corpus: tuple[RequirementSet, ...]
    gen_spec: GenSpec
    pool_size: int = 100

    def sample_failing_state(self, step: int, seed: int):
        """Failing state for this step: pool entry ``step % pool_size``."""
        index = step % self.pool_size
        reqs = self.corpus[index % len(self.corpus)]
        pool_seed = derive_seed(seed, "pool", index)
        for attempt in range(100):
            state = generate(reqs, self.gen_spec, derive_seed(pool_seed, attempt))
            if oracle_check(state, reqs) < 1.0:
                return reqs, state
        raise RuntimeError("could not sample a failing state in 100 draws")


@dataclass
class TrainingResult:
    policy: ActorPolicy
    editor: EditorModel
    trace: list[dict] = field(default_factory=list)

    def mean_reward_window(self, first: bool, width: int = 100) -> float:
        window = self.trace[:width] if first else self.trace[-width:]
        return sum(record["mean_reward"] for record in window) / len(window)


def train_phase1(
    world: TrainingWorld,
    policy: ActorPolicy,
    editor: EditorModel,
    config: GrpoConfig,
) -> TrainingResult:
    """Ascend the actor weights with the editor frozen.

    The KL penalty is anchored to the phase-start snapshot; the ratio
    denominator re-snapshots the live policy every ``reference_refresh``
    steps so clipping bounds each update rather than total progress.
    """
    live = policy
    kl_reference = snapshot_reference(policy)
    ratio_reference = kl_reference
    state_seed = derive_seed(config.seed, "phase1-states")
    trace = []
    for step in range(config.steps):
        if config.reference_refresh and step % config.reference_refresh == 0:
            ratio_reference = snapshot_reference(live)
        step_seed = derive_seed(config.seed, "phase1", step)
        reqs, state = world.sample_failing_state(step, state_seed)
        group = collect_group_phase1(
            live, editor, reqs, state, config,
            derive_seed(step_seed, "group"), ratio_reference,
        )
        loss, gradient = grpo_loss(group, live, kl_reference, config)
        live = live.with_weights(live.weights + config.learning_rate * gradient)
        kl, _ = exact_kl_gradient(live, kl_reference, state, reqs)
        trace.append(
            {
                "step": step,
                "phase": 1,
                "mean_reward": float(group.rewards().mean()),
                "kl": kl,
                "loss": loss,
            }
        )
    return TrainingResult(policy=live, editor=editor, trace=trace)


def train_phase2(
    world: TrainingWorld,
    policy: ActorPolicy,
    editor: EditorModel,
    config: GrpoConfig,
) -> TrainingResult:
    """Ascend the editor's success logits with the actor frozen.

    Reference handling mirrors train_phase1: the KL anchor is the starting
    editor and the ratio denominator refreshes every ``reference_refresh``
    steps.
    """
    live = editor
    kl_reference = editor
    ratio_reference = editor
    state_seed = derive_seed(config.seed, "phase2-states")
    trace = []
    for step in range(config.steps):
        if config.reference_refresh and step % config.reference_refresh == 0:
            ratio_reference = live
        step_seed = derive_seed(config.seed, "phase2", step)
        reqs, state = world.sample_failing_state(step, state_seed)
        group = collect_group_phase2(
            policy, live, reqs, state, config,
            derive_seed(step_seed, "group"), ratio_reference,
        )
        loss, gradient = grpo_loss(group, live, kl_reference, config)
        logits = np.array(live.success_logits) + config.learning_rate * gradient
        live = live.with_logits(logits)
        kl_terms = [
            _editor_kl_gradient(live, kl_reference, entry.action)[0]
            for entry in group.entries
        ]
        trace.append(
            {
                "step": step,
                "phase": 2,
                "mean_reward": float(group.rewards().mean()),
                "kl": sum(kl_terms) / len(kl_terms),
                "loss": loss,
            }
        )
    return TrainingResult(policy=policy, editor=live, trace=trace)
