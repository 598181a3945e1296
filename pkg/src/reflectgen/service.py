"""HTTP service exposing the generate/edit/check/actor wire protocol.

The service wraps the in-process simulator behind the same four-endpoint
contract a real model deployment would implement: JSON bodies, seeds and
correlation ids on every request, extraction documents for state views, and
checker/actor replies as transcripts with the answer in a \\boxed{} token.
States are kept in a content-addressed in-memory store.

Run it with: uvicorn reflectgen.service:app
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .backends import actor_directive, parse_edit_prompt, render_directive
from .policy import ActorPolicy, sample_action
from .scenegraph import (
    RequirementSet,
    classify_clause,
    graph_fingerprint,
    normalize_label,
    parse_prompt,
    render_extraction_document,
)
from .simworld import (
    EditorModel,
    GenSpec,
    WorldState,
    apply_directive,
    generate,
    satisfaction_vector,
)

SERVICE_VERSION = "1"


@dataclass
class ServiceSettings:
    gen_spec: GenSpec = field(default_factory=GenSpec)
    editor: EditorModel = field(
        default_factory=lambda: EditorModel.from_success_prob(
            0.75, side_effect_rate=0.1, unmentioned_loss_rate=0.3
        )
    )
    policy: ActorPolicy = field(default_factory=ActorPolicy.initial)
    store_capacity: int = 10_000


class GenerateRequest(BaseModel):
    prompt: str
    seed: int
    correlation_id: str = ""
    passthrough: dict = Field(default_factory=dict)


class StateResponse(BaseModel):
    correlation_id: str
    state_ref: str
    extraction: dict
    tags: list[str]


class EditRequest(BaseModel):
    state_ref: str
    edit_prompt: str
    seed: int
    correlation_id: str = ""
    passthrough: dict = Field(default_factory=dict)


class CheckRequest(BaseModel):
    state_ref: str
    descriptions: list[str]
    seed: int = 0
    correlation_id: str = ""


class CheckResponse(BaseModel):
    correlation_id: str
    response_text: str
    per_requirement: list[bool]
    total: int


class ActorRequest(BaseModel):
    state_ref: str
    descriptions: list[str]
    seed: int
    correlation_id: str = ""


class ActorResponse(BaseModel):
    correlation_id: str
    response_text: str


class _StateStore:
    """Content-addressed world-state store; refs are stable fingerprints.

    Bounded LRU: a long-running service would otherwise grow without limit.
    Episodes only ever hold their newest ref, so a generous cap is safe.
    """

    def __init__(self, capacity: int = 10_000):
        self._lock = threading.Lock()
        self._capacity = capacity
        self._states: OrderedDict[str, WorldState] = OrderedDict()

    def put(self, world: WorldState) -> str:
        ref = graph_fingerprint(world.graph, world.description_tags)
        with self._lock:
            self._states[ref] = world
            self._states.move_to_end(ref)
            while len(self._states) > self._capacity:
                self._states.popitem(last=False)
        return ref

    def get(self, ref: str) -> WorldState:
        with self._lock:
            world = self._states.get(ref)
            if world is not None:
                self._states.move_to_end(ref)
        if world is None:
            raise HTTPException(status_code=404, detail=f"unknown state_ref {ref!r}")
        return world


def _requirements_from_descriptions(descriptions: list[str]) -> RequirementSet:
    clauses = [normalize_label(text) for text in descriptions]
    clauses = [clause for clause in clauses if clause]
    if not clauses:
        raise HTTPException(status_code=422, detail="descriptions are empty")
    return RequirementSet(
        items=tuple(classify_clause(clause) for clause in clauses),
        source_prompt="; ".join(clauses),
    )


def _state_response(correlation_id: str, ref: str, world: WorldState) -> StateResponse:
    return StateResponse(
        correlation_id=correlation_id,
        state_ref=ref,
        extraction=render_extraction_document(world.graph),
        tags=sorted(world.description_tags),
    )


def create_app(settings: ServiceSettings | None = None) -> FastAPI:
    settings = settings or ServiceSettings()
    store = _StateStore(settings.store_capacity)
    app = FastAPI(title="reflectgen backend service", version=SERVICE_VERSION)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": SERVICE_VERSION}

    @app.post("/generate", response_model=StateResponse)
    def generate_endpoint(request: GenerateRequest):
        try:
            reqs = parse_prompt(request.prompt)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        world = generate(reqs, settings.gen_spec, request.seed)
        ref = store.put(world)
        return _state_response(request.correlation_id, ref, world)

    @app.post("/edit", response_model=StateResponse)
    def edit_endpoint(request: EditRequest):
        world = store.get(request.state_ref)
        try:
            directive = parse_edit_prompt(request.edit_prompt)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        edited, _ = apply_directive(world, directive, settings.editor, request.seed)
        ref = store.put(edited)
        return _state_response(request.correlation_id, ref, edited)

    @app.post("/check", response_model=CheckResponse)
    def check_endpoint(request: CheckRequest):
        world = store.get(request.state_ref)
        reqs = _requirements_from_descriptions(request.descriptions)
        vector = satisfaction_vector(world, reqs)
        lines = [
            f"{index + 1}. {req.clause}: {'satisfied' if done else 'not satisfied'}"
            for index, (req, done) in enumerate(zip(reqs.items, vector))
        ]
        transcript = (
            "<think> "
            + " ".join(lines)
            + f" </think><answer> \\boxed{{{sum(vector)}}}</answer>"
        )
        return CheckResponse(
            correlation_id=request.correlation_id,
            response_text=transcript,
            per_requirement=list(vector),
            total=len(vector),
        )

    @app.post("/actor", response_model=ActorResponse)
    def actor_endpoint(request: ActorRequest):
        world = store.get(request.state_ref)
        reqs = _requirements_from_descriptions(request.descriptions)
        action = sample_action(settings.policy, world, reqs, request.seed)
        prompt = render_directive(actor_directive(action, reqs))
        transcript = f"<think> targeting one open requirement </think><answer> \\boxed{{{prompt}}}</answer>"
        return ActorResponse(
            correlation_id=request.correlation_id, response_text=transcript
        )

    return app


app = create_app()
