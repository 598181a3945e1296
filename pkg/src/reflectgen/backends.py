"""Uniform generator/editor/checker/actor interfaces, sim and remote.

The wire protocol mirrors the in-process simulator: four JSON POST endpoints
(/generate, /edit, /check, /actor), every request carrying a seed and a
correlation id. Edit payloads travel as comma-separated clause text (focus
clause first); checker and actor replies embed their answer in the last
\\boxed{...} token of a free-text transcript.
"""

import logging
import re
import time
from dataclasses import dataclass, field

import httpx

from .policy import ActorPolicy, sample_action
from .scenegraph import (
    MalformedDocument,
    RequirementKind,
    RequirementSet,
    SceneGraph,
    Vocabulary,
    classify_clause,
    default_vocabulary,
    graph_fingerprint,
    normalize_label,
    parse_extraction_document,
)
from .seeding import derive_seed
from .simworld import (
    EditAction,
    EditDirective,
    EditKind,
    EditorModel,
    GenSpec,
    NOOP,
    WorldState,
    apply_directive,
    generate,
    satisfaction_vector,
    witness_action,
)

logger = logging.getLogger(__name__)

NOOP_CLAUSE = "no change"


class BackendFailure(RuntimeError):
    """Base class for backend transport and protocol errors."""


class Timeout(BackendFailure):
    pass


class RetriesExhausted(BackendFailure):
    pass


class MalformedResponse(BackendFailure):
    pass


class UnparseableVerdict(BackendFailure):
    pass


class UnparseableResponse(BackendFailure):
    pass


@dataclass(frozen=True)
class BackendEndpoint:
    base_url: str
    timeout: float = 10.0
    max_retries: int = 2
    retry_backoff: tuple[float, ...] = (0.0,)
    passthrough_params: dict = field(default_factory=dict)
    auth_token: str | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    def to_config(self) -> dict:
        # auth_token is deliberately omitted: effective configs are persisted
        # next to run outputs and must not capture credentials
        return {
            "base_url": self.base_url,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "retry_backoff": list(self.retry_backoff),
            "passthrough_params": dict(self.passthrough_params),
        }

    @staticmethod
    def from_config(payload: dict) -> "BackendEndpoint":
        return BackendEndpoint(
            base_url=payload["base_url"],
            timeout=payload.get("timeout", 10.0),
            max_retries=payload.get("max_retries", 2),
            retry_backoff=tuple(payload.get("retry_backoff", (0.0,))),
            passthrough_params=dict(payload.get("passthrough_params", {})),
            auth_token=payload.get("auth_token"),
        )


@dataclass(frozen=True)
class CheckerVerdict:
    satisfied_count: int
    total: int
    per_requirement: tuple[bool, ...] | None = None
    raw_response: str | None = None
    clamped: bool = False

    def __post_init__(self):
        if not 0 <= self.satisfied_count <= self.total:
            raise ValueError("satisfied_count must lie in [0, total]")
        if self.per_requirement is not None:
            if len(self.per_requirement) != self.total:
                raise ValueError("per-requirement verdict length must equal total")
            if sum(self.per_requirement) != self.satisfied_count:
                raise ValueError("per-requirement verdict disagrees with the count")

    @property
    def score(self) -> float:
        return self.satisfied_count / self.total


@dataclass(frozen=True)
class StateHandle:
    """Opaque state reference plus the scene-graph view every backend exposes."""

    graph: SceneGraph
    tags: frozenset[str] = frozenset()
    ref: str | None = None
    world: WorldState | None = None

    @property
    def fingerprint(self) -> str:
        return graph_fingerprint(self.graph, self.tags)


# --- edit-prompt dialect -------------------------------------------------

_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")


def extract_last_boxed(text: str) -> str | None:
    """Reasoning transcripts may box intermediate values; take the last one."""
    matches = _BOXED.findall(text)
    return matches[-1] if matches else None


def render_action_clause(action: EditAction) -> str:
    if action.kind is EditKind.NOOP:
        return NOOP_CLAUSE
    if action.kind is EditKind.ADD_TRIPLET:
        t = action.triplet
        return f"{t.subject.render()} {t.predicate} {t.object.render()}"
    if action.kind is EditKind.REMOVE_TRIPLET:
        t = action.triplet
        return f"no {t.subject.render()} {t.predicate} {t.object.render()}"
    if action.kind is EditKind.ADD_ENTITY:
        return action.entity.render()
    return action.tag


def parse_edit_clause(clause: str, vocabulary: Vocabulary | None = None) -> EditAction:
    clause = normalize_label(clause)
    if clause == NOOP_CLAUSE:
        return NOOP
    if clause.startswith("no "):
        rest = classify_clause(clause[3:], vocabulary)
        if rest.kind is RequirementKind.RELATION:
            return EditAction(kind=EditKind.REMOVE_TRIPLET, triplet=rest.triplet)
        return EditAction(kind=EditKind.ADD_TAG, tag=clause)
    requirement = classify_clause(clause, vocabulary)
    return witness_action(requirement)


def render_directive(directive: EditDirective) -> str:
    return ", ".join(directive.clauses)


def parse_edit_prompt(
    text: str, vocabulary: Vocabulary | None = None
) -> EditDirective:
    """Parse a comma-separated edit prompt; the first clause is the focus."""
    clauses = [normalize_label(piece) for piece in text.split(",")]
    clauses = [clause for clause in clauses if clause]
    if not clauses:
        raise UnparseableResponse(f"edit prompt {text!r} has no clauses")
    actions = [parse_edit_clause(clause, vocabulary) for clause in clauses]
    mentioned = frozenset().union(*(action.element_keys() for action in actions))
    return EditDirective(
        focus=actions[0], clauses=tuple(clauses), mentioned=mentioned
    )


def actor_directive(action: EditAction, reqs: RequirementSet) -> EditDirective:
    """Targeted fix first, then the full requirement restatement to preserve it."""
    focus_clause = render_action_clause(action)
    clauses = [focus_clause]
    for requirement in reqs.items:
        if requirement.clause != focus_clause:
            clauses.append(requirement.clause)
    mentioned = action.element_keys().union(
        *(requirement.element_keys() for requirement in reqs.items)
    )
    return EditDirective(
        focus=action, clauses=tuple(clauses), mentioned=mentioned
    )


# --- in-process simulator wiring -----------------------------------------


@dataclass
class SimBackends:
    """All four roles backed by the deterministic simulator."""

    gen_spec: GenSpec
    editor: EditorModel
    policy: ActorPolicy
    vocabulary: Vocabulary | None = None

    def generate(self, reqs: RequirementSet, seed: int) -> StateHandle:
        world = generate(reqs, self.gen_spec, seed, self.vocabulary)
        return StateHandle(graph=world.graph, tags=world.description_tags, world=world)

    def edit(
        self, handle: StateHandle, directive: EditDirective, seed: int
    ) -> StateHandle:
        if not directive.clauses:
            raise ValueError("refusing to dispatch an empty edit payload")
        world, _ = apply_directive(handle.world, directive, self.editor, seed)
        return StateHandle(graph=world.graph, tags=world.description_tags, world=world)

    def check(self, handle: StateHandle, reqs: RequirementSet) -> CheckerVerdict:
        vector = satisfaction_vector(handle.world, reqs)
        return CheckerVerdict(
            satisfied_count=sum(vector),
            total=len(vector),
            per_requirement=vector,
        )

    def propose(
        self,
        handle: StateHandle,
        reqs: RequirementSet,
        verdict: CheckerVerdict,
        seed: int,
    ) -> EditDirective:
        action = sample_action(self.policy, handle.world, reqs, seed)
        return actor_directive(action, reqs)


# --- remote wire-protocol clients -----------------------------------------


class RemoteSession:
    """Shared HTTP machinery: auth, retries with a fixed backoff schedule.

    Transport failures and 5xx replies are retried up to ``max_retries``
    times; 4xx replies and undecodable bodies fail immediately. Safe for
    concurrent use across episodes (httpx clients are thread-safe).
    """

    def __init__(self, endpoint: BackendEndpoint, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self._client = client or httpx.Client(
            base_url=endpoint.base_url, timeout=endpoint.timeout
        )

    def post(self, path: str, payload: dict) -> dict:
        headers = {}
        if self.endpoint.auth_token:
            headers["Authorization"] = f"Bearer {self.endpoint.auth_token}"
        last_error: BackendFailure | None = None
        attempts = self.endpoint.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                schedule = self.endpoint.retry_backoff
                delay = schedule[min(attempt - 1, len(schedule) - 1)] if schedule else 0.0
                if delay:
                    time.sleep(delay)
            try:
                response = self._client.post(path, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = Timeout(f"{path}: {exc}")
                continue
            except httpx.HTTPError as exc:
                last_error = BackendFailure(f"{path}: {exc}")
                continue
            if response.status_code >= 500:
                last_error = BackendFailure(
                    f"{path}: server error {response.status_code}"
                )
                continue
            if response.status_code >= 400:
                raise MalformedResponse(
                    f"{path}: client error {response.status_code}"
                )
            if attempt:
                logger.info("%s succeeded after %d retries", path, attempt)
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedResponse(f"{path}: body is not JSON") from exc
        if isinstance(last_error, Timeout) and self.endpoint.max_retries == 0:
            raise last_error
        raise RetriesExhausted(
            f"{path}: gave up after {attempts} attempts"
        ) from last_error


def _correlation_id(seed: int, path: str) -> str:
    return format(derive_seed(seed, "correlation", path), "016x")


def _handle_from_response(data: dict, path: str) -> StateHandle:
    if "state_ref" not in data or "extraction" not in data:
        raise MalformedResponse(f"{path}: missing state_ref or extraction")
    try:
        graph = parse_extraction_document(data["extraction"])
    except MalformedDocument as exc:
        raise MalformedResponse(f"{path}: {exc}") from exc
    return StateHandle(
        graph=graph,
        tags=frozenset(data.get("tags") or ()),
        ref=data["state_ref"],
    )


class RemoteGenerator:
    def __init__(self, session: RemoteSession):
        self.session = session

    def generate(self, reqs: RequirementSet, seed: int) -> StateHandle:
        payload = {
            "prompt": reqs.source_prompt,
            "seed": seed,
            "correlation_id": _correlation_id(seed, "/generate"),
            "passthrough": dict(self.session.endpoint.passthrough_params),
        }
        return _handle_from_response(
            self.session.post("/generate", payload), "/generate"
        )


class RemoteEditor:
    def __init__(self, session: RemoteSession):
        self.session = session

    def edit(
        self, handle: StateHandle, directive: EditDirective, seed: int
    ) -> StateHandle:
        prompt = render_directive(directive)
        if not prompt.strip():
            raise ValueError("refusing to dispatch an empty edit payload")
        payload = {
            "state_ref": handle.ref,
            "edit_prompt": prompt,
            "seed": seed,
            "correlation_id": _correlation_id(seed, "/edit"),
            "passthrough": dict(self.session.endpoint.passthrough_params),
        }
        return _handle_from_response(self.session.post("/edit", payload), "/edit")


class RemoteChecker:
    def __init__(self, session: RemoteSession):
        self.session = session

    def check(self, handle: StateHandle, reqs: RequirementSet) -> CheckerVerdict:
        # checking is deterministic; the wire contract still carries a seed
        payload = {
            "state_ref": handle.ref,
            "descriptions": list(reqs.clauses()),
            "seed": 0,
            "correlation_id": _correlation_id(0, "/check"),
        }
        data = self.session.post("/check", payload)
        text = data.get("response_text", "")
        boxed = extract_last_boxed(text)
        if boxed is None:
            raise UnparseableVerdict(f"no boxed integer in {text!r}")
        try:
            count = int(boxed.strip())
        except ValueError as exc:
            raise UnparseableVerdict(f"boxed token {boxed!r} is not an integer") from exc
        total = len(reqs)
        clamped = count < 0 or count > total
        count = min(max(count, 0), total)
        per_requirement = data.get("per_requirement")
        if per_requirement is not None and not clamped:
            per_requirement = tuple(bool(flag) for flag in per_requirement)
            if len(per_requirement) != total or sum(per_requirement) != count:
                per_requirement = None
        else:
            per_requirement = None
        return CheckerVerdict(
            satisfied_count=count,
            total=total,
            per_requirement=per_requirement,
            raw_response=text,
            clamped=clamped,
        )


class RemoteActor:
    def __init__(self, session: RemoteSession, vocabulary: Vocabulary | None = None):
        self.session = session
        self.vocabulary = vocabulary or default_vocabulary()

    def propose(
        self,
        handle: StateHandle,
        reqs: RequirementSet,
        verdict: CheckerVerdict,
        seed: int,
    ) -> EditDirective:
        payload = {
            "state_ref": handle.ref,
            "descriptions": list(reqs.clauses()),
            "seed": seed,
            "correlation_id": _correlation_id(seed, "/actor"),
        }
        data = self.session.post("/actor", payload)
        text = data.get("response_text", "")
        boxed = extract_last_boxed(text)
        if boxed is None:
            raise UnparseableResponse(f"no boxed edit prompt in {text!r}")
        return parse_edit_prompt(boxed, self.vocabulary)


@dataclass
class BackendBundle:
    generator: object
    editor: object
    checker: object
    actor: object


def build_sim_backends(
    gen_spec: GenSpec,
    editor: EditorModel,
    policy: ActorPolicy,
    vocabulary: Vocabulary | None = None,
) -> BackendBundle:
    sim = SimBackends(gen_spec, editor, policy, vocabulary)
    return BackendBundle(generator=sim, editor=sim, checker=sim, actor=sim)


def build_remote_backends(
    endpoint: BackendEndpoint,
    client: httpx.Client | None = None,
    vocabulary: Vocabulary | None = None,
) -> BackendBundle:
    session = RemoteSession(endpoint, client)
    return BackendBundle(
        generator=RemoteGenerator(session),
        editor=RemoteEditor(session),
        checker=RemoteChecker(session),
        actor=RemoteActor(session, vocabulary),
    )
