"""Generate-reflect-edit episode state machine with edit/restart budgets.

An episode generates, checks, and edits until the checker score reaches 1 or
the edit budget runs out; exhausted attempts restart from a fresh generation
with a derived seed, and a fully exhausted episode returns the very first
generation (the budget-literal fallback) unless configured otherwise.
Episodes are independent units of parallel work; within one episode the loop
is strictly sequential.
"""

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .backends import BackendBundle, BackendFailure, CheckerVerdict, StateHandle
from .metrics import EmptyRequirements, MetricReport, corpus_report, evaluate_pair
from .scenegraph import RequirementSet, witness_graph
from .seeding import DrawStream, derive_seed
from .simworld import EditDirective, witness_action

TRAJECTORY_SCHEMA = "traj-v1"


class EpisodeMode(enum.Enum):
    FULL = "full"
    NO_ACTOR_SAME_PROMPT = "no_actor_same_prompt"
    NO_ACTOR_UNSATISFIED_ONLY = "no_actor_unsatisfied_only"
    PASS_AT_K = "pass_at_k"


ABLATION_MODES = (
    EpisodeMode.NO_ACTOR_SAME_PROMPT,
    EpisodeMode.NO_ACTOR_UNSATISFIED_ONLY,
    EpisodeMode.PASS_AT_K,
)


class EpisodeStatus(enum.Enum):
    PASSED = "passed"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class EpisodeConfig:
    max_edits: int = 10
    max_restarts: int = 3
    mode: EpisodeMode = EpisodeMode.FULL
    k: int = 1
    seed: int = 0
    return_best_on_exhaust: bool = False

    def __post_init__(self):
        if self.max_edits < 0:
            raise ValueError("max_edits must be non-negative")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be non-negative")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    def to_config(self) -> dict:
        return {
            "max_edits": self.max_edits,
            "max_restarts": self.max_restarts,
            "mode": self.mode.value,
            "k": self.k,
            "seed": self.seed,
            "return_best_on_exhaust": self.return_best_on_exhaust,
        }

    @staticmethod
    def from_config(payload: dict) -> "EpisodeConfig":
        payload = dict(payload)
        if "mode" in payload:
            payload["mode"] = EpisodeMode(payload["mode"])
        return EpisodeConfig(**payload)


@dataclass
class TrajectoryLog:
    """Append-only audit trail; one JSON-serializable record per event."""

    records: list[dict] = field(default_factory=list)

    def add_generation(self, attempt: int, seed: int, score: float, fingerprint: str):
        self.records.append(
            {
                "schema": TRAJECTORY_SCHEMA,
                "kind": "generation",
                "attempt": attempt,
                "seed": seed,
                "score": score,
                "fingerprint": fingerprint,
            }
        )

    def add_edit(
        self,
        attempt: int,
        edit_index: int,
        seed: int,
        action: str,
        score: float,
        fingerprint: str,
    ):
        self.records.append(
            {
                "schema": TRAJECTORY_SCHEMA,
                "kind": "edit",
                "attempt": attempt,
                "edit_index": edit_index,
                "seed": seed,
                "action": action,
                "score": score,
                "fingerprint": fingerprint,
            }
        )

    def best_score(self) -> float:
        return max(record["score"] for record in self.records)


@dataclass(frozen=True)
class EpisodeResult:
    status: EpisodeStatus
    final_handle: StateHandle
    final_score: float
    best_score: float
    edits_used: int
    restarts_used: int
    log: TrajectoryLog

    @property
    def passed(self) -> bool:
        return self.status is EpisodeStatus.PASSED


def _unsatisfied_indices(verdict: CheckerVerdict) -> list[int]:
    if verdict.per_requirement is None:
        # remote checkers may only report a count; treat everything as open
        return list(range(verdict.total))
    return [i for i, done in enumerate(verdict.per_requirement) if not done]


def _rule_directive(
    reqs: RequirementSet, indices: list[int], seed: int
) -> EditDirective:
    """Fixed actor-free proposal: rotate the clause pool by a seeded offset."""
    offset = DrawStream(derive_seed(seed, "rule")).below(len(indices))
    ordered = indices[offset:] + indices[:offset]
    clauses = tuple(reqs.items[i].clause for i in ordered)
    mentioned = frozenset().union(
        *(reqs.items[i].element_keys() for i in ordered)
    )
    return EditDirective(
        focus=witness_action(reqs.items[ordered[0]]),
        clauses=clauses,
        mentioned=mentioned,
    )


def _propose(
    backends: BackendBundle,
    mode: EpisodeMode,
    handle: StateHandle,
    reqs: RequirementSet,
    verdict: CheckerVerdict,
    seed: int,
) -> EditDirective:
    if mode is EpisodeMode.FULL:
        return backends.actor.propose(handle, reqs, verdict, derive_seed(seed, "actor"))
    if mode is EpisodeMode.NO_ACTOR_SAME_PROMPT:
        return _rule_directive(reqs, list(range(len(reqs))), seed)
    if mode is EpisodeMode.NO_ACTOR_UNSATISFIED_ONLY:
        return _rule_directive(reqs, _unsatisfied_indices(verdict), seed)
    raise ValueError(f"mode {mode} does not propose edits")


def _run_pass_at_k(
    backends: BackendBundle, reqs: RequirementSet, config: EpisodeConfig
) -> EpisodeResult:
    log = TrajectoryLog()
    best = None  # (score, seed, handle)
    for candidate in range(config.k):
        seed = derive_seed(config.seed, "attempt", candidate)
        handle = backends.generator.generate(reqs, derive_seed(seed, "gen"))
        verdict = backends.checker.check(handle, reqs)
        score = verdict.score
        log.add_generation(candidate, seed, score, handle.fingerprint)
        if best is None or score > best[0] or (score == best[0] and seed < best[1]):
            best = (score, seed, handle)
    score, _, handle = best
    status = EpisodeStatus.PASSED if score >= 1.0 else EpisodeStatus.EXHAUSTED
    return EpisodeResult(
        status=status,
        final_handle=handle,
        final_score=score,
        best_score=score,
        edits_used=0,
        restarts_used=0,
        log=log,
    )


def run_episode(
    backends: BackendBundle, reqs: RequirementSet, config: EpisodeConfig
) -> EpisodeResult:
    """One full episode: generate, check, edit until pass or budgets run out."""
    if len(reqs) == 0:
        raise EmptyRequirements("episodes need a non-empty requirement set")
    if config.mode is EpisodeMode.PASS_AT_K:
        return _run_pass_at_k(backends, reqs, config)
    log = TrajectoryLog()
    first_handle = None
    first_score = 0.0
    best_handle = None
    best_score = -1.0
    total_edits = 0
    for attempt in range(config.max_restarts + 1):
        attempt_seed = derive_seed(config.seed, "attempt", attempt)
        handle = backends.generator.generate(reqs, derive_seed(attempt_seed, "gen"))
        verdict = backends.checker.check(handle, reqs)
        score = verdict.score
        log.add_generation(attempt, attempt_seed, score, handle.fingerprint)
        if attempt == 0:
            first_handle, first_score = handle, score
        if score > best_score:
            best_handle, best_score = handle, score
        edits = 0
        while score < 1.0 and edits < config.max_edits:
            edit_seed = derive_seed(attempt_seed, "edit", edits)
            directive = _propose(backends, config.mode, handle, reqs, verdict, edit_seed)
            handle = backends.editor.edit(
                handle, directive, derive_seed(edit_seed, "apply")
            )
            verdict = backends.checker.check(handle, reqs)
            score = verdict.score
            edits += 1
            total_edits += 1
            log.add_edit(
                attempt, edits, edit_seed, directive.clauses[0], score, handle.fingerprint
            )
            if score > best_score:
                best_handle, best_score = handle, score
        if score >= 1.0:
            return EpisodeResult(
                status=EpisodeStatus.PASSED,
                final_handle=handle,
                final_score=score,
                best_score=best_score,
                edits_used=total_edits,
                restarts_used=attempt,
                log=log,
            )
    if config.return_best_on_exhaust:
        final_handle, final_score = best_handle, best_score
    else:
        final_handle, final_score = first_handle, first_score
    return EpisodeResult(
        status=EpisodeStatus.EXHAUSTED,
        final_handle=final_handle,
        final_score=final_score,
        best_score=best_score,
        edits_used=total_edits,
        restarts_used=config.max_restarts,
        log=log,
    )


def run_ablation(
    backends: BackendBundle, reqs: RequirementSet, config: EpisodeConfig
) -> EpisodeResult:
    if config.mode not in ABLATION_MODES:
        raise ValueError(f"{config.mode} is not an ablation mode")
    return run_episode(backends, reqs, config)


@dataclass(frozen=True)
class CorpusItem:
    item_id: str
    reqs: RequirementSet


@dataclass
class BatchResult:
    episodes: list[tuple[str, EpisodeResult | None]]
    failures: list[tuple[str, str]]
    report: MetricReport | None
    summary: dict


def run_batch(
    backends: BackendBundle,
    corpus: list[CorpusItem],
    config: EpisodeConfig,
    parallelism: int = 1,
) -> BatchResult:
    """Independent episodes over a corpus with per-item derived seeds.

    Seeds derive from the item id alone, so shuffling the corpus or changing
    the parallelism degree cannot change any per-item result. Failed episodes
    are recorded and the batch continues.
    """
    if not corpus:
        raise ValueError("run_batch needs a non-empty corpus")
    ids = [item.item_id for item in corpus]
    if len(set(ids)) != len(ids):
        raise ValueError("corpus item ids must be unique")

    def one(item: CorpusItem):
        episode_config = replace(
            config, seed=derive_seed(config.seed, "episode", item.item_id)
        )
        return run_episode(backends, item.reqs, episode_config)

    outcomes: dict[str, EpisodeResult | BackendFailure] = {}
    if parallelism <= 1:
        for item in corpus:
            try:
                outcomes[item.item_id] = one(item)
            except BackendFailure as exc:
                outcomes[item.item_id] = exc
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = {item.item_id: pool.submit(one, item) for item in corpus}
            for item_id, future in futures.items():
                try:
                    outcomes[item_id] = future.result()
                except BackendFailure as exc:
                    outcomes[item_id] = exc

    episodes: list[tuple[str, EpisodeResult | None]] = []
    failures: list[tuple[str, str]] = []
    reports = []
    passed = 0
    total_edits = 0
    total_restarts = 0
    scores = []
    for item in corpus:
        outcome = outcomes[item.item_id]
        if isinstance(outcome, BackendFailure):
            failures.append((item.item_id, str(outcome)))
            episodes.append((item.item_id, None))
            continue
        episodes.append((item.item_id, outcome))
        reference = witness_graph(item.reqs)
        judge = outcome.final_handle.tags.__contains__
        reports.append(
            evaluate_pair(reference, outcome.final_handle.graph, item.reqs, judge)
        )
        passed += outcome.passed
        total_edits += outcome.edits_used
        total_restarts += outcome.restarts_used
        scores.append(outcome.final_score)
    completed = len(scores)
    report = corpus_report(reports) if reports else None
    summary = {
        "episodes": len(corpus),
        "completed": completed,
        "failures": len(failures),
        "pass_rate": passed / completed if completed else 0.0,
        "mean_score": sum(scores) / completed if completed else 0.0,
        "mean_edits": total_edits / completed if completed else 0.0,
        "mean_restarts": total_restarts / completed if completed else 0.0,
    }
    if report is not None:
        summary["metrics"] = report.to_record()
    return BatchResult(
        episodes=episodes, failures=failures, report=report, summary=summary
    )
