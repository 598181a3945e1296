"""Run configuration: file loading, flag overrides, and the benchmark fixture.

Config files are plain JSON mirroring the dataclass fields below. Flags
override file values, and the merged effective config is persisted next to
every command's outputs so a run can always be reproduced from its artifacts.
"""

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .backends import BackendEndpoint
from .grpo import GrpoConfig, TrainingWorld
from .orchestrator import CorpusItem, EpisodeConfig
from .scenegraph import parse_prompt
from .simworld import EditorModel, GenSpec


class ConfigError(ValueError):
    """Raised for unusable configuration files or flag combinations."""


def _load_benchmark_payload() -> dict:
    return json.loads(
        resources.files("reflectgen.data").joinpath("benchmark.json").read_text()
    )


def load_benchmark_corpus() -> list[CorpusItem]:
    """The committed 20-prompt benchmark corpus (5-8 requirements each)."""
    payload = _load_benchmark_payload()
    return [
        CorpusItem(item_id=f"bench-{index:02d}", reqs=parse_prompt(prompt))
        for index, prompt in enumerate(payload["prompts"])
    ]


def benchmark_gen_spec() -> GenSpec:
    return GenSpec.from_config(_load_benchmark_payload()["gen"])


def benchmark_editor() -> EditorModel:
    return EditorModel.from_config(_load_benchmark_payload()["editor"])


def benchmark_grpo_config(**overrides) -> GrpoConfig:
    payload = dict(_load_benchmark_payload()["grpo"])
    payload.update(overrides)
    return GrpoConfig.from_config(payload)


def benchmark_training_world() -> TrainingWorld:
    return TrainingWorld(
        corpus=tuple(item.reqs for item in load_benchmark_corpus()),
        gen_spec=benchmark_gen_spec(),
    )


def default_parallelism() -> int:
    return max(1, os.cpu_count() or 1)


@dataclass
class RunConfig:
    seed: int = 0
    corpus: str = "benchmark"
    out: str = "runs/out"
    parallelism: int = field(default_factory=default_parallelism)
    backend: str = "sim"
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    gen: GenSpec = field(default_factory=benchmark_gen_spec)
    editor: EditorModel = field(default_factory=benchmark_editor)
    grpo: GrpoConfig = field(default_factory=benchmark_grpo_config)
    endpoint: BackendEndpoint | None = None
    checkpoint: str | None = None

    def __post_init__(self):
        if self.backend not in ("sim", "remote"):
            raise ConfigError(f"backend must be sim or remote, got {self.backend!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if self.backend == "remote" and self.endpoint is None:
            raise ConfigError("remote backend requires endpoint settings")

    def to_effective_dict(self) -> dict:
        payload = self.result_config()
        payload["out"] = self.out
        payload["parallelism"] = self.parallelism
        return payload

    def result_config(self) -> dict:
        """Result-determining fields only: excludes execution details like
        the parallelism degree and output path, so digests stay comparable."""
        payload = {
            "seed": self.seed,
            "corpus": self.corpus,
            "backend": self.backend,
            "episode": self.episode.to_config(),
            "gen": self.gen.to_config(),
            "editor": self.editor.to_config(),
            "grpo": self.grpo.to_config(),
        }
        if self.endpoint is not None:
            payload["endpoint"] = self.endpoint.to_config()
        if self.checkpoint is not None:
            payload["checkpoint"] = self.checkpoint
        return payload

    @staticmethod
    def from_dict(payload: dict) -> "RunConfig":
        try:
            kwargs = {}
            for key in ("seed", "corpus", "out", "parallelism", "backend", "checkpoint"):
                if key in payload:
                    kwargs[key] = payload[key]
            if "episode" in payload:
                kwargs["episode"] = EpisodeConfig.from_config(payload["episode"])
            if "gen" in payload:
                kwargs["gen"] = GenSpec.from_config(payload["gen"])
            if "editor" in payload:
                kwargs["editor"] = EditorModel.from_config(payload["editor"])
            if "grpo" in payload:
                kwargs["grpo"] = GrpoConfig.from_config(payload["grpo"])
            if "endpoint" in payload:
                kwargs["endpoint"] = BackendEndpoint.from_config(payload["endpoint"])
            return RunConfig(**kwargs)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad configuration: {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(payload)


def load_corpus(spec: str) -> list[CorpusItem]:
    """A corpus is either the committed benchmark or a JSONL prompt file."""
    if spec == "benchmark":
        return load_benchmark_corpus()
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"corpus {spec} not found")
    items = []
    for line_no, line in enumerate(path.read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            reqs = parse_prompt(record["prompt"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"{spec}:{line_no + 1}: malformed corpus row: {exc}") from exc
        item_id = record.get("id", f"item-{line_no:04d}")
        items.append(CorpusItem(item_id=item_id, reqs=reqs))
    if not items:
        raise ConfigError(f"corpus {spec} is empty")
    return items
