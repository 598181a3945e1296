"""Deterministic toy world standing in for the image models.

Generation stochastically realizes a requirement set into a scene graph;
editing applies one discrete action per step with trainable per-kind success
probabilities plus collateral noise. Everything is a pure function of its
arguments including the seed, so whole episodes replay bit-identically.
"""

import enum
import math
from dataclasses import dataclass, replace

from .metrics import EmptyRequirements
from .scenegraph import (
    Entity,
    Requirement,
    RequirementKind,
    RequirementSet,
    SceneGraph,
    Triplet,
    Vocabulary,
    default_vocabulary,
    parse_entity,
    satisfies,
)
from .seeding import DrawStream, derive_seed


class EditKind(enum.Enum):
    ADD_TRIPLET = "add_triplet"
    REMOVE_TRIPLET = "remove_triplet"
    ADD_ENTITY = "add_entity"
    ADD_TAG = "add_tag"
    NOOP = "noop"


TRAINABLE_KINDS = (
    EditKind.ADD_TRIPLET,
    EditKind.REMOVE_TRIPLET,
    EditKind.ADD_ENTITY,
    EditKind.ADD_TAG,
)


@dataclass(frozen=True)
class EditAction:
    kind: EditKind
    triplet: Triplet | None = None
    entity: Entity | None = None
    tag: str | None = None

    def __post_init__(self):
        if self.kind in (EditKind.ADD_TRIPLET, EditKind.REMOVE_TRIPLET):
            if self.triplet is None:
                raise ValueError(f"{self.kind.value} requires a triplet payload")
        elif self.kind is EditKind.ADD_ENTITY:
            if self.entity is None:
                raise ValueError("add_entity requires an entity payload")
        elif self.kind is EditKind.ADD_TAG:
            if self.tag is None:
                raise ValueError("add_tag requires a tag payload")

    def element_keys(self) -> frozenset[str]:
        if self.kind in (EditKind.ADD_TRIPLET, EditKind.REMOVE_TRIPLET):
            t = self.triplet
            return frozenset(
                {
                    "rel:" + "|".join(t.key),
                    f"ent:{t.subject.label}",
                    f"ent:{t.object.label}",
                }
            )
        if self.kind is EditKind.ADD_ENTITY:
            return frozenset({f"ent:{self.entity.label}"})
        if self.kind is EditKind.ADD_TAG:
            return frozenset({f"tag:{self.tag}"})
        return frozenset()


NOOP = EditAction(kind=EditKind.NOOP)


def witness_action(requirement: Requirement) -> EditAction:
    """The single edit that would satisfy one requirement outright."""
    if requirement.kind is RequirementKind.OBJECT:
        return EditAction(kind=EditKind.ADD_ENTITY, entity=requirement.entity)
    if requirement.kind is RequirementKind.RELATION:
        return EditAction(kind=EditKind.ADD_TRIPLET, triplet=requirement.triplet)
    return EditAction(kind=EditKind.ADD_TAG, tag=requirement.clause)


@dataclass(frozen=True)
class GenSpec:
    """Stochastic generation profile: per-requirement success plus clutter."""

    base_prob: float = 0.6
    distractor_rate: float = 2.0
    rng_seed: int = 0
    per_requirement: tuple[float, ...] | None = None

    def __post_init__(self):
        probs = (self.base_prob,) + (self.per_requirement or ())
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValueError("satisfaction probabilities must lie in [0, 1]")
        if self.distractor_rate < 0:
            raise ValueError("distractor rate must be non-negative")

    def prob_for(self, index: int) -> float:
        if self.per_requirement is not None and index < len(self.per_requirement):
            return self.per_requirement[index]
        return self.base_prob

    def to_config(self) -> dict:
        payload = {
            "base_prob": self.base_prob,
            "distractor_rate": self.distractor_rate,
            "rng_seed": self.rng_seed,
        }
        if self.per_requirement is not None:
            payload["per_requirement"] = list(self.per_requirement)
        return payload

    @staticmethod
    def from_config(payload: dict) -> "GenSpec":
        per_req = payload.get("per_requirement")
        return GenSpec(
            base_prob=payload.get("base_prob", 0.6),
            distractor_rate=payload.get("distractor_rate", 2.0),
            rng_seed=payload.get("rng_seed", 0),
            per_requirement=tuple(per_req) if per_req is not None else None,
        )


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("success probability must lie strictly inside (0, 1)")
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class EditorModel:
    """Trainable editor: per-action-kind success logits plus collateral noise.

    ``side_effect_rate`` is the chance that one unrelated triplet is removed
    per applied edit. ``unmentioned_loss_rate`` is the per-element chance that
    scene content absent from the edit directive's mention scope is dropped,
    the simulator's rendering of an editor that rebuilds only what the prompt
    restates.
    """

    success_logits: tuple[float, ...]  # ordered as TRAINABLE_KINDS
    side_effect_rate: float = 0.0
    unmentioned_loss_rate: float = 0.0

    def __post_init__(self):
        if len(self.success_logits) != len(TRAINABLE_KINDS):
            raise ValueError("one success logit per trainable edit kind")
        if not all(math.isfinite(l) for l in self.success_logits):
            raise ValueError("success logits must be finite")
        for rate in (self.side_effect_rate, self.unmentioned_loss_rate):
            if rate < 0.0 or rate > 1.0:
                raise ValueError("rates must lie in [0, 1]")

    @staticmethod
    def from_success_prob(
        prob: float, side_effect_rate: float = 0.0, unmentioned_loss_rate: float = 0.0
    ) -> "EditorModel":
        return EditorModel(
            success_logits=tuple(_logit(prob) for _ in TRAINABLE_KINDS),
            side_effect_rate=side_effect_rate,
            unmentioned_loss_rate=unmentioned_loss_rate,
        )

    def logit_for(self, kind: EditKind) -> float:
        return self.success_logits[TRAINABLE_KINDS.index(kind)]

    def success_prob(self, kind: EditKind) -> float:
        if kind is EditKind.NOOP:
            return 1.0
        return _logistic(self.logit_for(kind))

    def with_logits(self, logits) -> "EditorModel":
        return replace(self, success_logits=tuple(float(l) for l in logits))

    def to_config(self) -> dict:
        return {
            "success_logits": {
                kind.value: logit
                for kind, logit in zip(TRAINABLE_KINDS, self.success_logits)
            },
            "side_effect_rate": self.side_effect_rate,
            "unmentioned_loss_rate": self.unmentioned_loss_rate,
        }

    @staticmethod
    def from_config(payload: dict) -> "EditorModel":
        if "success_prob" in payload:
            return EditorModel.from_success_prob(
                payload["success_prob"],
                payload.get("side_effect_rate", 0.0),
                payload.get("unmentioned_loss_rate", 0.0),
            )
        logits = payload["success_logits"]
        return EditorModel(
            success_logits=tuple(logits[kind.value] for kind in TRAINABLE_KINDS),
            side_effect_rate=payload.get("side_effect_rate", 0.0),
            unmentioned_loss_rate=payload.get("unmentioned_loss_rate", 0.0),
        )


@dataclass(frozen=True)
class WorldState:
    graph: SceneGraph
    description_tags: frozenset[str] = frozenset()
    step_index: int = 0
    seed_trace: tuple[int, ...] = ()


@dataclass(frozen=True)
class EditDirective:
    """One reflect-step edit payload: a focus action plus preservation scope.

    ``clauses`` is the ordered rendered prompt (focus clause first); the
    editor acts on ``focus`` and treats everything named in ``mentioned`` as
    content to keep.
    """

    focus: EditAction
    clauses: tuple[str, ...]
    mentioned: frozenset[str]

    def __post_init__(self):
        if not self.clauses:
            raise ValueError("edit directive must carry at least one clause")


@dataclass(frozen=True)
class EditOutcome:
    applied: bool
    removed_triplet: tuple[str, str, str] | None = None
    lost_elements: tuple[str, ...] = ()


def _would_change_satisfaction(
    graph: SceneGraph, probe: SceneGraph, requirements: RequirementSet
) -> bool:
    for requirement in requirements.items:
        if requirement.kind is RequirementKind.DESCRIPTION:
            continue
        if satisfies(probe, requirement) != satisfies(graph, requirement):
            return True
    return False


def generate(
    requirements: RequirementSet,
    spec: GenSpec,
    seed: int,
    vocabulary: Vocabulary | None = None,
) -> WorldState:
    """Realize each requirement independently, then sprinkle distractors.

    Distractor triplets are drawn from the fixed vocabulary and redrawn if
    they would flip any requirement's satisfaction, so the per-requirement
    realization probability stays exactly ``prob_for(i)``.
    """
    if len(requirements) == 0:
        raise EmptyRequirements("cannot generate from an empty requirement set")
    vocabulary = vocabulary or default_vocabulary()
    stream = DrawStream(derive_seed(spec.rng_seed, "generate", seed))
    entities: list[Entity] = []
    triplets: list[Triplet] = []
    tags: set[str] = set()
    for index, requirement in enumerate(requirements.items):
        realized = stream.bernoulli(spec.prob_for(index))
        if not realized:
            continue
        if requirement.kind is RequirementKind.OBJECT:
            entities.append(requirement.entity)
        elif requirement.kind is RequirementKind.RELATION:
            triplets.append(requirement.triplet)
        else:
            tags.add(requirement.clause)
    graph = SceneGraph.build(entities, triplets)
    entity_pool = sorted(vocabulary.entities)
    predicate_pool = sorted(vocabulary.predicates)
    for _ in range(stream.poisson(spec.distractor_rate)):
        for _attempt in range(20):
            subject = parse_entity(stream.choice(entity_pool))
            obj = parse_entity(stream.choice(entity_pool))
            predicate = stream.choice(predicate_pool)
            if subject.label == obj.label:
                continue
            candidate = Triplet(subject, predicate, obj)
            if graph.has_triplet(candidate.key):
                continue
            probe = graph.with_triplet(candidate)
            if _would_change_satisfaction(graph, probe, requirements):
                continue
            graph = probe
            break
    return WorldState(
        graph=graph,
        description_tags=frozenset(tags),
        step_index=0,
        seed_trace=tuple(stream.trace),
    )


def _apply_effect(
    graph: SceneGraph, tags: frozenset[str], action: EditAction
) -> tuple[SceneGraph, frozenset[str]]:
    if action.kind is EditKind.ADD_TRIPLET:
        return graph.with_triplet(action.triplet), tags
    if action.kind is EditKind.REMOVE_TRIPLET:
        return graph.without_triplet(action.triplet.key), tags
    if action.kind is EditKind.ADD_ENTITY:
        return graph.with_entity(action.entity), tags
    if action.kind is EditKind.ADD_TAG:
        return graph, tags | {action.tag}
    return graph, tags


def _unrelated_triplet_keys(graph: SceneGraph, action: EditAction):
    related = action.element_keys()
    keys = []
    for key in sorted(graph.triplet_keys()):
        subject, _, obj = key
        if "rel:" + "|".join(key) in related:
            continue
        if action.kind is EditKind.ADD_ENTITY and (
            subject == action.entity.label or obj == action.entity.label
        ):
            continue
        keys.append(key)
    return keys


def apply_edit_outcome(
    state: WorldState, action: EditAction, editor: EditorModel, seed: int
) -> tuple[WorldState, EditOutcome]:
    """Single-action edit: a success draw plus one collateral-removal draw.

    The collateral victim is chosen uniformly among triplets unrelated to the
    action. Noop consumes no draws and changes nothing but the step index.
    """
    if action.kind is EditKind.NOOP:
        next_state = replace(state, step_index=state.step_index + 1)
        return next_state, EditOutcome(applied=True)
    stream = DrawStream(derive_seed(seed, "edit"))
    applied = stream.bernoulli(editor.success_prob(action.kind))
    graph, tags = state.graph, state.description_tags
    if applied:
        graph, tags = _apply_effect(graph, tags, action)
    removed = None
    if stream.bernoulli(editor.side_effect_rate):
        pool = _unrelated_triplet_keys(graph, action)
        if pool:
            removed = pool[stream.below(len(pool))]
            graph = graph.without_triplet(removed)
    next_state = WorldState(
        graph=graph,
        description_tags=tags,
        step_index=state.step_index + 1,
        seed_trace=state.seed_trace + tuple(stream.trace),
    )
    return next_state, EditOutcome(applied=applied, removed_triplet=removed)


def apply_edit(
    state: WorldState, action: EditAction, editor: EditorModel, seed: int
) -> WorldState:
    next_state, _ = apply_edit_outcome(state, action, editor, seed)
    return next_state


def apply_directive(
    state: WorldState, directive: EditDirective, editor: EditorModel, seed: int
) -> tuple[WorldState, EditOutcome]:
    """Directive-level edit: apply the focus action, then drop unmentioned content.

    Every triplet, tag, and orphan entity whose key is absent from the
    directive's mention scope is independently removed with probability
    ``unmentioned_loss_rate``. Prompts that restate the full scene therefore
    preserve it; prompts that restate only the missing parts erode the rest.
    """
    next_state, outcome = apply_edit_outcome(state, directive.focus, editor, seed)
    if editor.unmentioned_loss_rate <= 0.0:
        return next_state, outcome
    stream = DrawStream(derive_seed(seed, "exposure"))
    graph = next_state.graph
    tags = set(next_state.description_tags)
    lost: list[str] = []
    for key in sorted(graph.triplet_keys()):
        if "rel:" + "|".join(key) in directive.mentioned:
            continue
        if stream.bernoulli(editor.unmentioned_loss_rate):
            graph = graph.without_triplet(key)
            lost.append("rel:" + "|".join(key))
    for tag in sorted(tags):
        if f"tag:{tag}" in directive.mentioned:
            continue
        if stream.bernoulli(editor.unmentioned_loss_rate):
            tags.discard(tag)
            lost.append(f"tag:{tag}")
    referenced = set()
    for key in graph.triplet_keys():
        referenced.add(key[0])
        referenced.add(key[2])
    for entity in list(graph.entities):
        if entity.label in referenced or f"ent:{entity.label}" in directive.mentioned:
            continue
        if stream.bernoulli(editor.unmentioned_loss_rate):
            graph = graph.without_entity(entity.label)
            lost.append(f"ent:{entity.label}")
    final = WorldState(
        graph=graph,
        description_tags=frozenset(tags),
        step_index=next_state.step_index,
        seed_trace=next_state.seed_trace + tuple(stream.trace),
    )
    return final, replace(outcome, lost_elements=tuple(lost))


def oracle_check(state: WorldState, requirements: RequirementSet) -> float:
    """Exact satisfaction ratio; description clauses check the world's tags."""
    total = len(requirements)
    if total == 0:
        raise EmptyRequirements("cannot check an empty requirement set")
    judge = state.description_tags.__contains__
    hits = sum(
        1
        for requirement in requirements.items
        if satisfies(state.graph, requirement, judge)
    )
    return hits / total


def satisfaction_vector(
    state: WorldState, requirements: RequirementSet
) -> tuple[bool, ...]:
    judge = state.description_tags.__contains__
    return tuple(
        satisfies(state.graph, requirement, judge)
        for requirement in requirements.items
    )
