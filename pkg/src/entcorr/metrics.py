"""Character error rate, its entity / non-entity decomposition, entity
recall, and span-level recognition scores.

All rates are plain ratios (0.25, not 25%).  CER has no upper bound: an
insertion-heavy hypothesis pushes it past 1 and nothing here clamps it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .alignment import AlignmentOp, OpKind, align, alignment_cost
from .errors import (
    EmptyReferenceError,
    OverlappingSpansError,
    SpanOutOfBoundsError,
)
from .ner import EntitySpan

__all__ = [
    "AlignmentOp",
    "OpKind",
    "align",
    "alignment_cost",
    "RegionCounts",
    "MetricReport",
    "cer",
    "cer_counts",
    "region_counts",
    "region_cer",
    "ne_recall",
    "ne_recall_counts",
    "ner_match_counts",
    "ner_prf",
    "measure",
    "merge_reports",
]


@dataclass(frozen=True)
class RegionCounts:
    """Edit counts for one region of the reference."""

    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_chars: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        # zero reference characters -> 0.0 by convention, flagged upstream
        if self.ref_chars == 0:
            return 0.0
        return self.errors / self.ref_chars

    def __add__(self, other: "RegionCounts") -> "RegionCounts":
        return RegionCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_chars + other.ref_chars,
        )

    def to_json_dict(self) -> dict:
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "errors": self.errors,
            "ref_chars": self.ref_chars,
            "rate": self.rate,
        }


def _validated_spans(spans: Sequence[EntitySpan], ref_len: int) -> tuple[EntitySpan, ...]:
    ordered = tuple(sorted(spans, key=lambda s: s.start))
    prev_end = 0
    for span in ordered:
        if span.end > ref_len:
            raise SpanOutOfBoundsError(
                f"span [{span.start}, {span.end}) exceeds reference length {ref_len}")
        if span.start < prev_end:
            raise OverlappingSpansError(
                f"span [{span.start}, {span.end}) overlaps the previous span")
        prev_end = span.end
    return ordered


def _ref_index_in_entity(index: int, spans: Sequence[EntitySpan]) -> bool:
    return any(s.start <= index < s.end for s in spans)


def _insertion_in_entity(prev_ref: int | None, spans: Sequence[EntitySpan]) -> bool:
    # An insertion sits between reference characters; it belongs to the
    # entity region only when that gap is strictly inside a span, i.e. the
    # preceding reference character is in the span but not its last.
    if prev_ref is None:
        return False
    return any(s.start <= prev_ref < s.end - 1 for s in spans)


def cer_counts(ref: str, hyp: str) -> RegionCounts:
    s = d = i = 0
    for op in align(ref, hyp):
        if op.kind is OpKind.SUBSTITUTE:
            s += 1
        elif op.kind is OpKind.DELETE:
            d += 1
        elif op.kind is OpKind.INSERT:
            i += 1
    return RegionCounts(s, d, i, len(ref))


def cer(ref: str, hyp: str) -> float:
    """(S + D + I) / N over the minimal character alignment."""
    if not ref:
        raise EmptyReferenceError("CER needs a non-empty reference")
    return cer_counts(ref, hyp).rate


def region_counts(
    ref: str, hyp: str, spans: Sequence[EntitySpan],
) -> tuple[RegionCounts, RegionCounts]:
    """Split the alignment's edits between entity and non-entity regions.

    Every op lands in exactly one region, so the two halves always sum back
    to the plain counts.
    """
    ordered = _validated_spans(spans, len(ref))
    ent = {"s": 0, "d": 0, "i": 0}
    non = {"s": 0, "d": 0, "i": 0}
    prev_ref: int | None = None
    for op in align(ref, hyp):
        if op.kind is OpKind.INSERT:
            bucket = ent if _insertion_in_entity(prev_ref, ordered) else non
            bucket["i"] += 1
            continue
        bucket = ent if _ref_index_in_entity(op.ref_index, ordered) else non
        if op.kind is OpKind.SUBSTITUTE:
            bucket["s"] += 1
        elif op.kind is OpKind.DELETE:
            bucket["d"] += 1
        prev_ref = op.ref_index
    entity_chars = sum(len(s) for s in ordered)
    return (
        RegionCounts(ent["s"], ent["d"], ent["i"], entity_chars),
        RegionCounts(non["s"], non["d"], non["i"], len(ref) - entity_chars),
    )


def region_cer(ref: str, hyp: str, spans: Sequence[EntitySpan]) -> tuple[float, float]:
    """(entity-region rate, non-entity-region rate)."""
    entity, non_entity = region_counts(ref, hyp, spans)
    return entity.rate, non_entity.rate


def ne_recall_counts(ref: str, hyp: str, spans: Sequence[EntitySpan]) -> tuple[int, int]:
    """(entities fully recovered, total entities).

    An entity counts as recovered only when every one of its reference
    characters is a Match in the alignment; one substitution or deletion
    inside the span loses the whole entity.
    """
    ordered = _validated_spans(spans, len(ref))
    matched: set[int] = set()
    for op in align(ref, hyp):
        if op.kind is OpKind.MATCH:
            matched.add(op.ref_index)
    recalled = sum(
        1 for s in ordered if all(i in matched for i in range(s.start, s.end))
    )
    return recalled, len(ordered)


def ne_recall(ref: str, hyp: str, spans: Sequence[EntitySpan]) -> float:
    recalled, total = ne_recall_counts(ref, hyp, spans)
    if total == 0:
        return 1.0
    return recalled / total


def _labels_compatible(a: str | None, b: str | None) -> bool:
    return a is None or b is None or a == b


def ner_match_counts(
    predicted: Sequence[EntitySpan], gold: Sequence[EntitySpan],
) -> tuple[int, int, int]:
    """(true positives, predicted count, gold count) for one utterance.

    A prediction scores iff some gold span has the same (start, end); type
    labels must agree only when both sides carry one.
    """
    gold_by_pos = {(g.start, g.end): g for g in gold}
    tp = 0
    for p in predicted:
        g = gold_by_pos.get((p.start, p.end))
        if g is not None and _labels_compatible(p.label, g.label):
            tp += 1
    return tp, len(predicted), len(gold)


def ner_prf(
    predicted: Sequence,
    gold: Sequence,
) -> tuple[float, float, float]:
    """Micro-averaged (recall, precision, f1) over exact span matches.

    Accepts one utterance's span lists, or parallel lists of per-utterance
    span lists for corpus scoring.  F1 is 0 when both P and R are 0.
    """
    def per_utterance(seq: Sequence) -> list[Sequence[EntitySpan]]:
        if all(isinstance(item, EntitySpan) for item in seq):
            return [seq]
        return list(seq)

    pred_groups = per_utterance(predicted)
    gold_groups = per_utterance(gold)
    if len(pred_groups) != len(gold_groups):
        raise ValueError(
            f"{len(pred_groups)} predicted utterances vs {len(gold_groups)} gold")
    tp = n_pred = n_gold = 0
    for p, g in zip(pred_groups, gold_groups):
        t, np_, ng = ner_match_counts(p, g)
        tp += t
        n_pred += np_
        n_gold += ng
    recall = tp / n_gold if n_gold else 0.0
    precision = tp / n_pred if n_pred else 0.0
    f1 = 0.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return recall, precision, f1


@dataclass(frozen=True)
class MetricReport:
    """Counts and rates for one utterance or a whole corpus (after merging)."""

    total: RegionCounts
    entity: RegionCounts
    non_entity: RegionCounts
    entities_recalled: int
    entities_total: int

    @property
    def cer(self) -> float:
        return self.total.rate

    @property
    def ne_cer(self) -> float:
        return self.entity.rate

    @property
    def nne_cer(self) -> float:
        return self.non_entity.rate

    @property
    def ne_recall(self) -> float:
        if self.entities_total == 0:
            return 1.0
        return self.entities_recalled / self.entities_total

    @property
    def entity_region_empty(self) -> bool:
        return self.entity.ref_chars == 0

    @property
    def no_spans(self) -> bool:
        return self.entities_total == 0

    def to_json_dict(self) -> dict:
        return {
            "cer": self.cer,
            "ne_cer": self.ne_cer,
            "nne_cer": self.nne_cer,
            "ne_recall": self.ne_recall,
            "counts": {
                "total": self.total.to_json_dict(),
                "entity": self.entity.to_json_dict(),
                "non_entity": self.non_entity.to_json_dict(),
            },
            "entities": {
                "recalled": self.entities_recalled,
                "total": self.entities_total,
            },
            "flags": {
                "entity_region_empty": self.entity_region_empty,
                "no_spans": self.no_spans,
            },
        }


def measure(ref: str, hyp: str, spans: Sequence[EntitySpan]) -> MetricReport:
    """Full per-utterance report; merge with merge_reports for corpus rates."""
    if not ref:
        raise EmptyReferenceError("metrics need a non-empty reference")
    entity, non_entity = region_counts(ref, hyp, spans)
    recalled, total_spans = ne_recall_counts(ref, hyp, spans)
    return MetricReport(
        total=entity + non_entity,
        entity=entity,
        non_entity=non_entity,
        entities_recalled=recalled,
        entities_total=total_spans,
    )


def merge_reports(reports: Iterable[MetricReport]) -> MetricReport:
    """Corpus-level report: sum counts, recompute rates from the sums."""
    total = RegionCounts()
    entity = RegionCounts()
    non_entity = RegionCounts()
    recalled = spans = 0
    seen = False
    for r in reports:
        seen = True
        total = total + r.total
        entity = entity + r.entity
        non_entity = non_entity + r.non_entity
        recalled += r.entities_recalled
        spans += r.entities_total
    if not seen:
        raise EmptyReferenceError("no utterances to merge")
    return MetricReport(total, entity, non_entity, recalled, spans)
