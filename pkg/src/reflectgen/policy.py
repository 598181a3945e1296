"""Linear-softmax actor over discrete edit actions.

The policy scores every candidate action with a dot product between a fixed
feature basis and its weight vector, then samples from the tempered softmax.
Log-probabilities, the KL divergence to a reference snapshot, and all
gradients are exact, which keeps the finite-difference gates honest.

Feature basis (documented order):
  0-4  action kind one-hot (add_triplet, remove_triplet, add_entity,
       add_tag, noop)
  5    1.0 when the action witnesses a currently unsatisfied requirement
  6    unsatisfied fraction of the requirement set
  7    step_index / 10, capped at 1.0

Evaluation is read-only and parallel-safe; weight updates happen at a single
writer between rollout groups.
"""

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .scenegraph import RequirementSet
from .seeding import DrawStream, derive_seed
from .simworld import (
    NOOP,
    EditAction,
    EditKind,
    WorldState,
    satisfaction_vector,
    witness_action,
)

FEATURE_NAMES = (
    "kind:add_triplet",
    "kind:remove_triplet",
    "kind:add_entity",
    "kind:add_tag",
    "kind:noop",
    "targets_unsatisfied",
    "deficit_fraction",
    "step_fraction",
)

_KIND_INDEX = {
    EditKind.ADD_TRIPLET: 0,
    EditKind.REMOVE_TRIPLET: 1,
    EditKind.ADD_ENTITY: 2,
    EditKind.ADD_TAG: 3,
    EditKind.NOOP: 4,
}

CHECKPOINT_VERSION = 1


class ActionNotInSupport(ValueError):
    """Raised when a log-probability is requested for a non-candidate action."""


class SupportMismatch(ValueError):
    """Raised when two policies are compared over different candidate sets."""


class CheckpointMismatch(ValueError):
    """Raised when a checkpoint's feature basis does not match this build."""


def feature_fingerprint() -> str:
    return hashlib.sha256("|".join(FEATURE_NAMES).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ActorPolicy:
    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        if weights.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"weights must have shape ({len(FEATURE_NAMES)},)")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @staticmethod
    def initial(temperature: float = 1.0) -> "ActorPolicy":
        return ActorPolicy(np.zeros(len(FEATURE_NAMES)), temperature)

    def with_weights(self, weights) -> "ActorPolicy":
        return replace(self, weights=np.asarray(weights, dtype=float))


@dataclass(frozen=True)
class ActionDistribution:
    actions: tuple[EditAction, ...]
    probabilities: np.ndarray
    features: np.ndarray  # shape (n_actions, n_features)

    def prob_of(self, action: EditAction) -> float:
        for index, candidate in enumerate(self.actions):
            if candidate == action:
                return float(self.probabilities[index])
        raise ActionNotInSupport(f"action {action} not in candidate support")


def candidate_actions(state: WorldState, reqs: RequirementSet) -> list[EditAction]:
    """Enumerate the action support for one reflect step.

    One witness action per unsatisfied requirement (requirement order), one
    removal per non-witness triplet (sorted), and Noop last.
    """
    satisfied = satisfaction_vector(state, reqs)
    actions = [
        witness_action(req)
        for req, done in zip(reqs.items, satisfied)
        if not done
    ]
    witness_keys = {
        req.triplet.key
        for req in reqs.items
        if req.triplet is not None
    }
    for key in sorted(state.graph.triplet_keys()):
        if key not in witness_keys:
            for triplet in state.graph.triplets:
                if triplet.key == key:
                    actions.append(
                        EditAction(kind=EditKind.REMOVE_TRIPLET, triplet=triplet)
                    )
                    break
    actions.append(NOOP)
    return actions


def featurize(
    state: WorldState, reqs: RequirementSet, action: EditAction
) -> np.ndarray:
    satisfied = satisfaction_vector(state, reqs)
    unsatisfied = [req for req, done in zip(reqs.items, satisfied) if not done]
    features = np.zeros(len(FEATURE_NAMES))
    features[_KIND_INDEX[action.kind]] = 1.0
    if any(witness_action(req) == action for req in unsatisfied):
        features[5] = 1.0
    features[6] = len(unsatisfied) / len(reqs)
    features[7] = min(state.step_index, 10) / 10.0
    return features


def action_distribution(
    policy: ActorPolicy, state: WorldState, reqs: RequirementSet
) -> ActionDistribution:
    actions = tuple(candidate_actions(state, reqs))
    features = np.stack([featurize(state, reqs, action) for action in actions])
    logits = features @ policy.weights / policy.temperature
    logits -= logits.max()
    exp = np.exp(logits)
    return ActionDistribution(
        actions=actions, probabilities=exp / exp.sum(), features=features
    )


def log_prob(
    policy: ActorPolicy, state: WorldState, reqs: RequirementSet, action: EditAction
) -> float:
    dist = action_distribution(policy, state, reqs)
    return float(np.log(dist.prob_of(action)))


def log_prob_gradient(
    policy: ActorPolicy, state: WorldState, reqs: RequirementSet, action: EditAction
) -> tuple[float, np.ndarray]:
    """(log pi(a|s), d log pi / d weights) = (f(a) - E_pi[f]) / T."""
    dist = action_distribution(policy, state, reqs)
    index = None
    for i, candidate in enumerate(dist.actions):
        if candidate == action:
            index = i
            break
    if index is None:
        raise ActionNotInSupport(f"action {action} not in candidate support")
    mean_features = dist.probabilities @ dist.features
    gradient = (dist.features[index] - mean_features) / policy.temperature
    return float(np.log(dist.probabilities[index])), gradient


def exact_kl(
    policy: ActorPolicy,
    reference: ActorPolicy,
    state: WorldState,
    reqs: RequirementSet,
) -> float:
    value, _ = exact_kl_gradient(policy, reference, state, reqs)
    return value


def exact_kl_gradient(
    policy: ActorPolicy,
    reference: ActorPolicy,
    state: WorldState,
    reqs: RequirementSet,
) -> tuple[float, np.ndarray]:
    """KL(pi_policy || pi_reference) over the shared candidate support."""
    live = action_distribution(policy, state, reqs)
    ref = action_distribution(reference, state, reqs)
    if live.actions != ref.actions:
        raise SupportMismatch("policies disagree on the candidate support")
    log_ratio = np.log(live.probabilities) - np.log(ref.probabilities)
    kl = float(np.sum(live.probabilities * log_ratio))
    mean_features = live.probabilities @ live.features
    centered = live.features - mean_features
    gradient = (live.probabilities * log_ratio) @ centered / policy.temperature
    return kl, gradient


def sample_action(
    policy: ActorPolicy, state: WorldState, reqs: RequirementSet, seed: int
) -> EditAction:
    dist = action_distribution(policy, state, reqs)
    stream = DrawStream(derive_seed(seed, "sample"))
    target = stream.next_unit()
    cumulative = 0.0
    for action, probability in zip(dist.actions, dist.probabilities):
        cumulative += probability
        if target < cumulative:
            return action
    return dist.actions[-1]


def snapshot_reference(policy: ActorPolicy) -> ActorPolicy:
    """Deep copy; later updates to the live policy leave the snapshot intact."""
    return ActorPolicy(policy.weights.copy(), policy.temperature)


def save_checkpoint(policy: ActorPolicy, path) -> None:
    payload = {
        "format": "actor-checkpoint",
        "version": CHECKPOINT_VERSION,
        "feature_basis": feature_fingerprint(),
        "weights": [float(w) for w in policy.weights],
        "temperature": policy.temperature,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path) -> ActorPolicy:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "actor-checkpoint":
        raise CheckpointMismatch(f"{path} is not an actor checkpoint")
    if payload.get("feature_basis") != feature_fingerprint():
        raise CheckpointMismatch(
            "checkpoint feature basis does not match this build"
        )
    return ActorPolicy(
        np.asarray(payload["weights"], dtype=float), payload["temperature"]
    )
