"""Scene-graph-guided generate-reflect-edit loop with group-relative training."""

from .backends import (
    BackendBundle,
    BackendEndpoint,
    CheckerVerdict,
    StateHandle,
    build_remote_backends,
    build_sim_backends,
)
from .grpo import GrpoConfig, RolloutGroup, TrainingWorld, train_phase1, train_phase2
from .metrics import MetricReport, checker_score, corpus_report, ent_iou, rel_iou, sg_iou
from .orchestrator import (
    CorpusItem,
    EpisodeConfig,
    EpisodeMode,
    EpisodeResult,
    run_ablation,
    run_batch,
    run_episode,
)
from .policy import ActorPolicy, action_distribution, candidate_actions, sample_action
from .scenegraph import (
    Entity,
    Requirement,
    RequirementKind,
    RequirementSet,
    SceneGraph,
    Triplet,
    parse_extraction_document,
    parse_prompt,
    render_extraction_document,
    satisfies,
)
from .simworld import (
    EditAction,
    EditDirective,
    EditKind,
    EditorModel,
    GenSpec,
    WorldState,
    apply_edit,
    generate,
    oracle_check,
)

__version__ = "0.1.0"

__all__ = [
    "ActorPolicy",
    "BackendBundle",
    "BackendEndpoint",
    "CheckerVerdict",
    "CorpusItem",
    "EditAction",
    "EditDirective",
    "EditKind",
    "EditorModel",
    "Entity",
    "EpisodeConfig",
    "EpisodeMode",
    "EpisodeResult",
    "GenSpec",
    "GrpoConfig",
    "MetricReport",
    "Requirement",
    "RequirementKind",
    "RequirementSet",
    "RolloutGroup",
    "SceneGraph",
    "StateHandle",
    "TrainingWorld",
    "Triplet",
    "WorldState",
    "action_distribution",
    "apply_edit",
    "build_remote_backends",
    "build_sim_backends",
    "candidate_actions",
    "checker_score",
    "corpus_report",
    "ent_iou",
    "generate",
    "oracle_check",
    "parse_extraction_document",
    "parse_prompt",
    "rel_iou",
    "render_extraction_document",
    "run_ablation",
    "run_batch",
    "run_episode",
    "sample_action",
    "satisfies",
    "sg_iou",
    "train_phase1",
    "train_phase2",
]
