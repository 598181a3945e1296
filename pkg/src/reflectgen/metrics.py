"""Scene-graph fidelity metrics and the requirement-satisfaction score.

All IoU metrics are exact set computations over normalized elements: no
synonym expansion, attributes folded into the entity rendering. Empty/empty
IoU is defined as 1.0 so the identity property is total.
"""

from dataclasses import dataclass

from .scenegraph import (
    RequirementSet,
    SceneGraph,
    satisfies,
)


class EmptyRequirements(ValueError):
    """Raised when a score is requested for an empty requirement set."""


@dataclass(frozen=True)
class MetricReport:
    sg_iou: float
    ent_iou: float
    rel_iou: float
    checker_score: float
    counts: tuple[int, int, int, int]  # (intersection, union, satisfied, total)

    def to_record(self) -> dict:
        return {
            "sg_iou": self.sg_iou,
            "ent_iou": self.ent_iou,
            "rel_iou": self.rel_iou,
            "checker_score": self.checker_score,
            "intersection": self.counts[0],
            "union": self.counts[1],
            "satisfied": self.counts[2],
            "total": self.counts[3],
        }


def graph_elements(graph: SceneGraph) -> frozenset[str]:
    """Element universe for SG-IoU: rendered entities plus rendered triplets."""
    entities = {f"ent:{entity.render()}" for entity in graph.entities}
    triplets = {
        "rel:" + "|".join((t.subject.render(), t.predicate, t.object.render()))
        for t in graph.triplets
    }
    return frozenset(entities | triplets)


def entity_elements(graph: SceneGraph) -> frozenset[str]:
    return frozenset(entity.render() for entity in graph.entities)


def predicate_elements(graph: SceneGraph) -> frozenset[str]:
    return frozenset(t.predicate for t in graph.triplets)


def _iou(a: frozenset, b: frozenset) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def sg_iou(reference: SceneGraph, candidate: SceneGraph) -> float:
    return _iou(graph_elements(reference), graph_elements(candidate))


def ent_iou(reference: SceneGraph, candidate: SceneGraph) -> float:
    return _iou(entity_elements(reference), entity_elements(candidate))


def rel_iou(reference: SceneGraph, candidate: SceneGraph) -> float:
    return _iou(predicate_elements(reference), predicate_elements(candidate))


def satisfied_count(
    graph: SceneGraph, requirements: RequirementSet, description_judge=None
) -> int:
    return sum(
        1
        for requirement in requirements.items
        if satisfies(graph, requirement, description_judge)
    )


def checker_score(
    graph: SceneGraph, requirements: RequirementSet, description_judge=None
) -> float:
    """Fraction of requirements satisfied by the graph; 1.0 means a pass."""
    total = len(requirements)
    if total == 0:
        raise EmptyRequirements("cannot score an empty requirement set")
    return satisfied_count(graph, requirements, description_judge) / total


def evaluate_pair(
    reference: SceneGraph,
    candidate: SceneGraph,
    requirements: RequirementSet,
    description_judge=None,
) -> MetricReport:
    elements_ref = graph_elements(reference)
    elements_cand = graph_elements(candidate)
    hits = satisfied_count(candidate, requirements, description_judge)
    total = len(requirements)
    if total == 0:
        raise EmptyRequirements("cannot score an empty requirement set")
    return MetricReport(
        sg_iou=_iou(elements_ref, elements_cand),
        ent_iou=ent_iou(reference, candidate),
        rel_iou=rel_iou(reference, candidate),
        checker_score=hits / total,
        counts=(
            len(elements_ref & elements_cand),
            len(elements_ref | elements_cand),
            hits,
            total,
        ),
    )


def score_corpus(pairs, description_judge=None) -> MetricReport:
    """Aggregate (reference, candidate, requirements) pairs into a mean report."""
    return corpus_report(
        [
            evaluate_pair(reference, candidate, requirements, description_judge)
            for reference, candidate, requirements in pairs
        ]
    )


def corpus_report(reports: list[MetricReport]) -> MetricReport:
    """Arithmetic mean of each metric over a non-empty report list."""
    if not reports:
        raise ValueError("corpus_report needs at least one report")
    n = len(reports)
    return MetricReport(
        sg_iou=sum(r.sg_iou for r in reports) / n,
        ent_iou=sum(r.ent_iou for r in reports) / n,
        rel_iou=sum(r.rel_iou for r in reports) / n,
        checker_score=sum(r.checker_score for r in reports) / n,
        counts=(
            sum(r.counts[0] for r in reports),
            sum(r.counts[1] for r in reports),
            sum(r.counts[2] for r in reports),
            sum(r.counts[3] for r in reports),
        ),
    )


REPORT_COLUMNS = ("SG-IoU", "Ent-IoU", "Rel-IoU", "Checker")


def format_report_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Aligned plain-text table, one row per configuration."""
    label_width = max([len("Configuration")] + [len(label) for label, _ in rows])
    header = "Configuration".ljust(label_width) + "".join(
        f"  {column:>8}" for column in REPORT_COLUMNS
    )
    lines = [header, "-" * len(header)]
    for label, report in rows:
        values = (
            report.sg_iou,
            report.ent_iou,
            report.rel_iou,
            report.checker_score,
        )
        lines.append(
            label.ljust(label_width) + "".join(f"  {value:>8.4f}" for value in values)
        )
    return "\n".join(lines) + "\n"
