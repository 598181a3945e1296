"""Scene-graph data model: requirements, graphs, parsing, and satisfaction.

Entities are identified by their normalized head label; adjectives ride along
as an attribute list. Relation triplets are directed and compared at the
label level. All types are immutable, so graphs and requirement sets can be
shared freely across threads.
"""

import enum
import json
from dataclasses import dataclass, field
from importlib import resources

from .seeding import canonical_json, stable_digest

ARTICLES = ("a", "an", "the")


class EmptyPrompt(ValueError):
    """Raised when no clause survives prompt normalization."""


class MalformedDocument(ValueError):
    """Raised when an extraction document violates the three-key schema."""


def normalize_label(raw: str) -> str:
    """Lowercase, collapse whitespace, and strip leading articles.

    Idempotent; may return an empty string (callers decide what that means).
    """
    tokens = raw.lower().split()
    while tokens and tokens[0] in ARTICLES:
        tokens = tokens[1:]
    return " ".join(tokens)


@dataclass(frozen=True)
class Entity:
    label: str
    attributes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.label:
            raise ValueError("entity label must be non-empty after normalization")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("entity attributes must not contain duplicates")

    def render(self) -> str:
        return " ".join(self.attributes + (self.label,))


@dataclass(frozen=True)
class Triplet:
    subject: Entity
    predicate: str
    object: Entity

    def __post_init__(self):
        if not self.predicate:
            raise ValueError("triplet predicate must be non-empty")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject.label, self.predicate, self.object.label)


class RequirementKind(enum.Enum):
    OBJECT = "object"
    RELATION = "relation"
    DESCRIPTION = "description"


@dataclass(frozen=True)
class Requirement:
    kind: RequirementKind
    clause: str
    entity: Entity | None = None
    triplet: Triplet | None = None

    def __post_init__(self):
        if self.kind is RequirementKind.OBJECT and self.entity is None:
            raise ValueError("object requirement needs an entity payload")
        if self.kind is RequirementKind.RELATION and self.triplet is None:
            raise ValueError("relation requirement needs a triplet payload")

    def element_keys(self) -> frozenset[str]:
        """Canonical keys of the content this requirement mentions."""
        if self.kind is RequirementKind.OBJECT:
            return frozenset({f"ent:{self.entity.label}"})
        if self.kind is RequirementKind.RELATION:
            t = self.triplet
            return frozenset(
                {
                    "rel:" + "|".join(t.key),
                    f"ent:{t.subject.label}",
                    f"ent:{t.object.label}",
                }
            )
        return frozenset({f"tag:{self.clause}"})


@dataclass(frozen=True)
class RequirementSet:
    items: tuple[Requirement, ...]
    source_prompt: str

    def __post_init__(self):
        if not self.items:
            raise EmptyPrompt("requirement set must not be empty")

    def __len__(self) -> int:
        return len(self.items)

    def clauses(self) -> tuple[str, ...]:
        return tuple(req.clause for req in self.items)


def parse_entity(text: str) -> Entity:
    """Build an entity from a noun phrase: last token is the head label."""
    normalized = normalize_label(text)
    if not normalized:
        raise ValueError(f"entity phrase {text!r} normalizes to nothing")
    tokens = normalized.split()
    attributes = []
    for token in tokens[:-1]:
        if token not in attributes:
            attributes.append(token)
    return Entity(label=tokens[-1], attributes=tuple(attributes))


@dataclass(frozen=True)
class Vocabulary:
    """Lexicons that drive clause classification and distractor sampling."""

    entities: frozenset[str]
    predicates: tuple[str, ...]

    def predicate_token_sequences(self) -> list[tuple[str, ...]]:
        sequences = [tuple(p.split()) for p in self.predicates]
        sequences.sort(key=len, reverse=True)
        return sequences


def load_vocabulary() -> Vocabulary:
    raw = json.loads(
        resources.files("reflectgen.data").joinpath("vocabulary.json").read_text()
    )
    return Vocabulary(
        entities=frozenset(raw["entities"]), predicates=tuple(raw["predicates"])
    )


_DEFAULT_VOCABULARY: Vocabulary | None = None


def default_vocabulary() -> Vocabulary:
    global _DEFAULT_VOCABULARY
    if _DEFAULT_VOCABULARY is None:
        _DEFAULT_VOCABULARY = load_vocabulary()
    return _DEFAULT_VOCABULARY


def _find_predicate(tokens: list[str], vocabulary: Vocabulary):
    """Leftmost-longest predicate window with non-empty phrases on both sides."""
    for sequence in vocabulary.predicate_token_sequences():
        width = len(sequence)
        for start in range(1, len(tokens) - width):
            if tuple(tokens[start : start + width]) == sequence:
                return start, width, " ".join(sequence)
    return None


def classify_clause(clause: str, vocabulary: Vocabulary | None = None) -> Requirement:
    """Classify one normalized clause by the rule table.

    Relation: "<noun phrase> <known predicate> <noun phrase>".
    Object: a bare noun phrase (at most four tokens) whose head is a known
    entity label. Everything else is a free-text description.
    """
    vocabulary = vocabulary or default_vocabulary()
    tokens = clause.split()
    match = _find_predicate(tokens, vocabulary)
    if match is not None:
        start, width, predicate = match
        subject = parse_entity(" ".join(tokens[:start]))
        obj = parse_entity(" ".join(tokens[start + width :]))
        return Requirement(
            kind=RequirementKind.RELATION,
            clause=clause,
            triplet=Triplet(subject=subject, predicate=predicate, object=obj),
        )
    stripped = normalize_label(clause)
    head_tokens = stripped.split()
    if head_tokens and len(head_tokens) <= 4 and head_tokens[-1] in vocabulary.entities:
        return Requirement(
            kind=RequirementKind.OBJECT, clause=clause, entity=parse_entity(stripped)
        )
    return Requirement(kind=RequirementKind.DESCRIPTION, clause=clause)


def parse_prompt(text: str, vocabulary: Vocabulary | None = None) -> RequirementSet:
    """Split a prompt into semicolon-delimited requirements, order preserved."""
    if not text:
        raise EmptyPrompt("prompt is empty")
    clauses = []
    for piece in text.split(";"):
        normalized = normalize_label(piece)
        if normalized:
            clauses.append(normalized)
    if not clauses:
        raise EmptyPrompt(f"no clause survives normalization in {text!r}")
    items = tuple(classify_clause(clause, vocabulary) for clause in clauses)
    return RequirementSet(items=items, source_prompt=text)


@dataclass(frozen=True)
class SceneGraph:
    """Immutable set of labeled entities plus directed relation triplets.

    Entity identity is the normalized label; merging unions attribute lists.
    Triplets are deduplicated on their (subject, predicate, object) label key
    and every endpoint is guaranteed to exist in ``entities``.
    """

    entities: tuple[Entity, ...] = ()
    triplets: tuple[Triplet, ...] = ()
    _by_label: dict = field(default_factory=dict, repr=False, compare=False)
    _triplet_keys: frozenset = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self):
        by_label = {}
        for entity in self.entities:
            if entity.label in by_label:
                raise ValueError(f"duplicate entity label {entity.label!r}")
            by_label[entity.label] = entity
        keys = set()
        for triplet in self.triplets:
            for endpoint in (triplet.subject.label, triplet.object.label):
                if endpoint not in by_label:
                    raise ValueError(
                        f"triplet endpoint {endpoint!r} missing from entities"
                    )
            keys.add(triplet.key)
        object.__setattr__(self, "_by_label", by_label)
        object.__setattr__(self, "_triplet_keys", frozenset(keys))

    @staticmethod
    def build(entities=(), triplets=()) -> "SceneGraph":
        merged: dict[str, Entity] = {}

        def absorb(entity: Entity):
            current = merged.get(entity.label)
            if current is None:
                merged[entity.label] = entity
                return
            attributes = list(current.attributes)
            for attribute in entity.attributes:
                if attribute not in attributes:
                    attributes.append(attribute)
            merged[entity.label] = Entity(current.label, tuple(attributes))

        for entity in entities:
            absorb(entity)
        keyed: dict[tuple[str, str, str], Triplet] = {}
        for triplet in triplets:
            absorb(triplet.subject)
            absorb(triplet.object)
            keyed.setdefault(triplet.key, triplet)
        final_triplets = tuple(
            Triplet(merged[s], p, merged[o])
            for (s, p, o) in sorted(keyed)
        )
        final_entities = tuple(merged[label] for label in sorted(merged))
        return SceneGraph(entities=final_entities, triplets=final_triplets)

    def entity(self, label: str) -> Entity | None:
        return self._by_label.get(label)

    def has_triplet(self, key: tuple[str, str, str]) -> bool:
        return key in self._triplet_keys

    def triplet_keys(self) -> frozenset:
        return self._triplet_keys

    def with_entity(self, entity: Entity) -> "SceneGraph":
        return SceneGraph.build(self.entities + (entity,), self.triplets)

    def with_triplet(self, triplet: Triplet) -> "SceneGraph":
        return SceneGraph.build(self.entities, self.triplets + (triplet,))

    def without_triplet(self, key: tuple[str, str, str]) -> "SceneGraph":
        kept = tuple(t for t in self.triplets if t.key != key)
        return SceneGraph.build(self.entities, kept)

    def without_entity(self, label: str) -> "SceneGraph":
        """Drop an entity and, by cascade, every triplet referencing it."""
        kept_entities = tuple(e for e in self.entities if e.label != label)
        kept_triplets = tuple(
            t
            for t in self.triplets
            if t.subject.label != label and t.object.label != label
        )
        return SceneGraph.build(kept_entities, kept_triplets)

    def is_empty(self) -> bool:
        return not self.entities and not self.triplets


def satisfies(graph: SceneGraph, requirement: Requirement, description_judge=None) -> bool:
    """Decide one requirement against a graph.

    Object: an entity with the same label exists and its attribute set is a
    superset of the required attributes. Relation: the directed triplet key
    exists and both endpoint entities carry the required attributes.
    Description: delegated to ``description_judge``; unsatisfied when absent.
    """
    if requirement.kind is RequirementKind.OBJECT:
        entity = graph.entity(requirement.entity.label)
        return entity is not None and set(requirement.entity.attributes) <= set(
            entity.attributes
        )
    if requirement.kind is RequirementKind.RELATION:
        wanted = requirement.triplet
        if not graph.has_triplet(wanted.key):
            return False
        subject = graph.entity(wanted.subject.label)
        obj = graph.entity(wanted.object.label)
        return set(wanted.subject.attributes) <= set(subject.attributes) and set(
            wanted.object.attributes
        ) <= set(obj.attributes)
    if description_judge is None:
        return False
    return bool(description_judge(requirement.clause))


def parse_extraction_document(document) -> SceneGraph:
    """Parse the three-key extraction format into a scene graph.

    ``document`` may be a dict or its JSON text. Unseen triplet endpoints are
    auto-added as entities, so dangling references never raise.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise MalformedDocument("extraction document must be an object")
    for key in ("scene_graph", "object_list", "predicate_list"):
        if key not in document:
            raise MalformedDocument(f"missing key {key!r}")
        if not isinstance(document[key], list):
            raise MalformedDocument(f"key {key!r} must hold a list")
    for predicate in document["predicate_list"]:
        if not isinstance(predicate, str):
            raise MalformedDocument("predicate_list entries must be strings")
    entities = []
    for raw in document["object_list"]:
        if not isinstance(raw, str):
            raise MalformedDocument("object_list entries must be strings")
        if not normalize_label(raw):
            raise MalformedDocument(f"object_list entry {raw!r} is empty")
        entities.append(parse_entity(raw))
    triplets = []
    for row in document["scene_graph"]:
        if not isinstance(row, list) or len(row) != 3:
            raise MalformedDocument(f"triplet row {row!r} must have exactly 3 items")
        subject, predicate, obj = row
        if not all(isinstance(part, str) for part in row):
            raise MalformedDocument(f"triplet row {row!r} must hold strings")
        predicate = normalize_label(predicate)
        if not predicate or not normalize_label(subject) or not normalize_label(obj):
            raise MalformedDocument(f"triplet row {row!r} has an empty member")
        triplets.append(
            Triplet(parse_entity(subject), predicate, parse_entity(obj))
        )
    return SceneGraph.build(entities, triplets)


def render_extraction_document(graph: SceneGraph) -> dict:
    """Render a graph back to the canonical three-key extraction format."""
    return {
        "scene_graph": [
            [t.subject.render(), t.predicate, t.object.render()]
            for t in graph.triplets
        ],
        "object_list": [entity.render() for entity in graph.entities],
        "predicate_list": sorted({t.predicate for t in graph.triplets}),
    }


def witness_graph(requirements: RequirementSet) -> SceneGraph:
    """Graph realizing every object/relation requirement; the metric reference."""
    entities = []
    triplets = []
    for requirement in requirements.items:
        if requirement.kind is RequirementKind.OBJECT:
            entities.append(requirement.entity)
        elif requirement.kind is RequirementKind.RELATION:
            triplets.append(requirement.triplet)
    return SceneGraph.build(entities, triplets)


def graph_fingerprint(graph: SceneGraph, tags=()) -> str:
    """Stable hash of the canonicalized graph plus description tags."""
    payload = render_extraction_document(graph)
    payload["tags"] = sorted(tags)
    return stable_digest(payload)


def graph_to_json(graph: SceneGraph) -> str:
    return canonical_json(render_extraction_document(graph))
