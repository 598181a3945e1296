"""Command-line entry point: eval, run, train, ablate, report.

Every command persists its effective merged configuration next to its
outputs, derives all randomness from the single --seed flag, and writes
machine-readable JSONL plus an aligned plain-text table. Reruns with the
same config and seed produce byte-identical files at any parallelism.

Exit codes: 0 full success, 1 configuration error, 2 partial episode failures.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .backends import BackendEndpoint, build_remote_backends, build_sim_backends
from .config import (
    ConfigError,
    RunConfig,
    load_config,
    load_corpus,
)
from .grpo import TrainingWorld, train_phase1, train_phase2
from .metrics import MetricReport, corpus_report, evaluate_pair, format_report_table
from .orchestrator import EpisodeMode, run_batch
from .policy import ActorPolicy, CheckpointMismatch, load_checkpoint, save_checkpoint
from .scenegraph import parse_extraction_document, parse_prompt
from .seeding import canonical_json, stable_digest
from .simworld import EditorModel


class MissingCheckpoint(ConfigError):
    """Phase 2 needs a phase-1 actor checkpoint unless trained from init."""


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, payload) -> None:
    _write(path, canonical_json(payload) + "\n")


def _write_jsonl(path: Path, records) -> None:
    _write(path, "".join(canonical_json(record) + "\n" for record in records))


def _persist_effective_config(config: RunConfig, out: Path) -> None:
    _write_json(out / "effective_config.json", config.to_effective_dict())


def _merge_flags(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "parallelism", None) is not None:
        config.parallelism = args.parallelism
    if getattr(args, "corpus", None) is not None:
        config.corpus = args.corpus
    if getattr(args, "out", None) is not None:
        config.out = args.out
    if getattr(args, "backend", None) is not None:
        config.backend = args.backend
    if getattr(args, "checkpoint", None) is not None:
        config.checkpoint = args.checkpoint
    if getattr(args, "mode", None) is not None:
        config.episode = replace(config.episode, mode=EpisodeMode(args.mode))
    if getattr(args, "k", None) is not None:
        config.episode = replace(config.episode, k=args.k)
    if getattr(args, "endpoint_base", None) is not None:
        config.endpoint = BackendEndpoint(
            base_url=args.endpoint_base,
            timeout=args.endpoint_timeout,
            max_retries=args.endpoint_retries,
            auth_token=args.endpoint_token,
        )
    config.episode = replace(config.episode, seed=config.seed)
    config.__post_init__()  # re-validate after flag overrides
    if config.backend == "remote" and config.endpoint is None:
        raise ConfigError("remote backend requires --endpoint-base")
    return config


def _build_backends(config: RunConfig):
    if config.backend == "remote":
        return build_remote_backends(config.endpoint)
    policy = load_checkpoint(config.checkpoint) if config.checkpoint else ActorPolicy.initial()
    return build_sim_backends(config.gen, config.editor, policy)


def cmd_eval(args) -> int:
    config = _merge_flags(load_config(args.config), args)
    out = Path(config.out)
    path = Path(config.corpus)
    if not path.exists():
        raise ConfigError(f"eval corpus {config.corpus} not found")
    rows = []
    records = []
    reports = []
    for line_no, line in enumerate(path.read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            reqs = parse_prompt(record["prompt"])
            reference = parse_extraction_document(record["reference"])
            candidate = parse_extraction_document(record["candidate"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(
                f"{config.corpus}:{line_no + 1}: malformed eval pair: {exc}"
            ) from exc
        tags = frozenset(record.get("tags") or ())
        report = evaluate_pair(reference, candidate, reqs, tags.__contains__)
        item_id = record.get("id", f"pair-{line_no:04d}")
        reports.append(report)
        records.append({"id": item_id, **report.to_record()})
    if not reports:
        raise ConfigError(f"eval corpus {config.corpus} is empty")
    aggregate = corpus_report(reports)
    records.append({"id": "mean", **aggregate.to_record()})
    rows = [(record["id"], report) for record, report in zip(records, reports + [aggregate])]
    table = format_report_table(rows) + (
        "comparison: exact match after normalization; "
        "attributes fold into entity labels\n"
    )
    _persist_effective_config(config, out)
    _write_jsonl(out / "eval_records.jsonl", records)
    _write(out / "eval_table.txt", table)
    print(table)
    return 0


def _batch_outputs(config: RunConfig, out: Path, batch, label: str) -> None:
    trajectories = []
    for item_id, episode in batch.episodes:
        if episode is None:
            continue
        for record in episode.log.records:
            trajectories.append({"episode": item_id, **record})
    results = []
    for item_id, episode in batch.episodes:
        if episode is None:
            failure = dict(batch.failures)[item_id]
            results.append({"id": item_id, "error": failure})
            continue
        results.append(
            {
                "id": item_id,
                "status": episode.status.value,
                "final_score": episode.final_score,
                "best_score": episode.best_score,
                "edits_used": episode.edits_used,
                "restarts_used": episode.restarts_used,
            }
        )
    summary = {"label": label, "config_digest": stable_digest(config.result_config())}
    summary.update(batch.summary)
    _persist_effective_config(config, out)
    _write_jsonl(out / "trajectories.jsonl", trajectories)
    _write_jsonl(out / "episodes.jsonl", results)
    _write_json(out / "summary.json", summary)
    if batch.report is not None:
        _write(
            out / "table.txt",
            format_report_table([(label, batch.report)]),
        )


def cmd_run(args) -> int:
    config = _merge_flags(load_config(args.config), args)
    out = Path(config.out)
    corpus = load_corpus(config.corpus)
    backends = _build_backends(config)
    batch = run_batch(backends, corpus, config.episode, config.parallelism)
    _batch_outputs(config, out, batch, config.episode.mode.value)
    print(
        f"episodes={batch.summary['episodes']} pass_rate={batch.summary['pass_rate']:.4f} "
        f"mean_score={batch.summary['mean_score']:.4f} mean_edits={batch.summary['mean_edits']:.2f}"
    )
    return 2 if batch.failures else 0


def cmd_train(args) -> int:
    config = _merge_flags(load_config(args.config), args)
    out = Path(config.out)
    corpus = load_corpus(config.corpus)
    world = TrainingWorld(
        corpus=tuple(item.reqs for item in corpus), gen_spec=config.gen
    )
    grpo_config = replace(config.grpo, seed=config.seed)
    if args.phase == 1:
        policy = (
            load_checkpoint(config.checkpoint)
            if config.checkpoint
            else ActorPolicy.initial()
        )
        editor = config.editor
    else:
        if config.checkpoint:
            policy = load_checkpoint(config.checkpoint)
        elif args.from_init:
            policy = ActorPolicy.initial()
        else:
            raise MissingCheckpoint(
                "phase 2 requires --checkpoint with a phase-1 actor, or --from-init"
            )
        editor = config.editor

    def eval_pass1(policy_now: ActorPolicy, editor_now: EditorModel) -> dict:
        backends = build_sim_backends(config.gen, editor_now, policy_now)
        episode = replace(config.episode, mode=EpisodeMode.FULL, seed=config.seed)
        batch = run_batch(backends, corpus, episode, config.parallelism)
        return {
            "pass_rate": batch.summary["pass_rate"],
            "mean_score": batch.summary["mean_score"],
        }

    out.mkdir(parents=True, exist_ok=True)
    before = eval_pass1(policy, editor)
    if args.phase == 1:
        result = train_phase1(world, policy, editor, grpo_config)
        save_checkpoint(result.policy, out / "actor_checkpoint.json")
        checkpoint_ref = "actor_checkpoint.json"
    else:
        result = train_phase2(world, policy, editor, grpo_config)
        _write_json(out / "editor_checkpoint.json", result.editor.to_config())
        checkpoint_ref = "editor_checkpoint.json"
    after = eval_pass1(result.policy, result.editor)
    trace_records = [
        {**record, "checkpoint_ref": checkpoint_ref} for record in result.trace
    ]
    summary = {
        "phase": args.phase,
        "steps": grpo_config.steps,
        "first_window_mean_reward": result.mean_reward_window(first=True),
        "last_window_mean_reward": result.mean_reward_window(first=False),
        "pass_at_1_before": before,
        "pass_at_1_after": after,
        "checkpoint": checkpoint_ref,
    }
    _persist_effective_config(config, out)
    _write_jsonl(out / "training_trace.jsonl", trace_records)
    _write_json(out / "training_summary.json", summary)
    print(
        f"phase={args.phase} reward {summary['first_window_mean_reward']:.4f} -> "
        f"{summary['last_window_mean_reward']:.4f}; pass@1 mean score "
        f"{before['mean_score']:.4f} -> {after['mean_score']:.4f}"
    )
    return 0


def cmd_ablate(args) -> int:
    config = _merge_flags(load_config(args.config), args)
    out = Path(config.out)
    corpus = load_corpus(config.corpus)
    modes = [EpisodeMode(mode.strip()) for mode in args.modes.split(",") if mode.strip()]
    if not modes:
        raise ConfigError("ablate needs at least one mode")
    backends = _build_backends(config)
    rows = []
    records = []
    had_failures = False
    for mode in modes:
        episode = replace(config.episode, mode=mode, seed=config.seed)
        batch = run_batch(backends, corpus, episode, config.parallelism)
        had_failures = had_failures or bool(batch.failures)
        label = mode.value if mode is not EpisodeMode.PASS_AT_K else f"pass_at_{episode.k}"
        rows.append((label, batch.report))
        records.append({"mode": label, "seed": config.seed, **batch.summary})
    _persist_effective_config(config, out)
    _write_jsonl(out / "ablation_records.jsonl", records)
    table = format_report_table(rows)
    _write(out / "ablation_table.txt", table)
    print(table)
    return 2 if had_failures else 0


def cmd_report(args) -> int:
    path = Path(args.records)
    if not path.exists():
        raise ConfigError(f"records file {args.records} not found")
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        metrics = record.get("metrics", record)
        try:
            report = MetricReport(
                sg_iou=metrics["sg_iou"],
                ent_iou=metrics["ent_iou"],
                rel_iou=metrics["rel_iou"],
                checker_score=metrics.get(
                    "checker_score", metrics.get("mean_score", 0.0)
                ),
                counts=(
                    metrics.get("intersection", 0),
                    metrics.get("union", 0),
                    metrics.get("satisfied", 0),
                    metrics.get("total", 0),
                ),
            )
        except KeyError as exc:
            raise ConfigError(f"record missing metric column: {exc}") from exc
        rows.append((record.get("mode", record.get("id", "row")), report))
    if not rows:
        raise ConfigError(f"records file {args.records} is empty")
    table = format_report_table(rows)
    if args.out:
        _write(Path(args.out) / "report_table.txt", table)
    print(table)
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--parallelism", type=int, default=None)
    parser.add_argument("--corpus", default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--backend", choices=("sim", "remote"), default=None)
    parser.add_argument("--checkpoint", default=None)
    parser.add_argument("--endpoint-base", dest="endpoint_base", default=None)
    parser.add_argument(
        "--endpoint-timeout", dest="endpoint_timeout", type=float, default=10.0
    )
    parser.add_argument(
        "--endpoint-retries", dest="endpoint_retries", type=int, default=2
    )
    parser.add_argument("--endpoint-token", dest="endpoint_token", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reflectgen",
        description="scene-graph reflect-edit loop: evaluation, episodes, training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="score reference/candidate extraction pairs")
    _add_common_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_run = sub.add_parser("run", help="run episodes over a corpus")
    _add_common_flags(p_run)
    p_run.add_argument(
        "--mode",
        choices=[mode.value for mode in EpisodeMode],
        default=None,
    )
    p_run.add_argument("--k", type=int, default=None, help="candidates for pass_at_k")
    p_run.set_defaults(func=cmd_run)

    p_train = sub.add_parser("train", help="run one training phase")
    _add_common_flags(p_train)
    p_train.add_argument("--phase", type=int, choices=(1, 2), required=True)
    p_train.add_argument(
        "--from-init",
        action="store_true",
        help="allow phase 2 without a phase-1 checkpoint",
    )
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", help="compare modes on identical seeds")
    _add_common_flags(p_ablate)
    p_ablate.add_argument(
        "--modes",
        default="full,no_actor_same_prompt,no_actor_unsatisfied_only,pass_at_k",
    )
    p_ablate.add_argument("--k", type=int, default=None)
    p_ablate.set_defaults(func=cmd_ablate)

    p_report = sub.add_parser("report", help="format a records file as a table")
    p_report.add_argument("--records", required=True)
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
