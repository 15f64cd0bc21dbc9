"""BIO tagging utilities, tag transfer onto noisy hypotheses, and
masked-sequence training examples for the entity recognizer.

Tags are plain strings: "O", "B-PER", "I-LOC", ...  A bare "B"/"I" without a
type suffix is accepted and yields an untyped span.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Sequence

from .alignment import OpKind, align
from .errors import (
    EmptyInputError,
    LengthMismatchError,
    OverlappingSpansError,
    SpanOutOfBoundsError,
)
from .phonetics import similarity
from .repository import Entity, EntityRepository

logger = logging.getLogger(__name__)

SEP_TOKEN = "<s>"
MASK_TOKEN = "[MASK]"

OUTSIDE = "O"


@dataclass(frozen=True)
class EntitySpan:
    """Half-open character span [start, end) with an optional type label."""

    start: int
    end: int
    label: str | None = None
    text: str | None = None

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid span [{self.start}, {self.end})")
        if self.text is not None and len(self.text) != self.end - self.start:
            raise ValueError(
                f"span text {self.text!r} does not cover [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == OUTSIDE:
        return OUTSIDE, None
    prefix, _, label = tag.partition("-")
    if prefix not in ("B", "I"):
        raise ValueError(f"malformed tag {tag!r}")
    return prefix, label or None


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Fix orphan continuation tags.

    An "I" at the start, after "O", or after a span with a different label
    cannot continue anything, so it is promoted to "B".  Valid sequences
    pass through unchanged; repairs are logged.
    """
    repaired: list[str] = []
    fixes = 0
    prev_prefix, prev_label = OUTSIDE, None
    for tag in tags:
        prefix, label = _split_tag(tag)
        if prefix == "I" and (prev_prefix == OUTSIDE or prev_label != label):
            prefix = "B"
            tag = "B" if label is None else f"B-{label}"
            fixes += 1
        repaired.append(tag)
        prev_prefix, prev_label = prefix, label
    if fixes:
        logger.debug("repaired %d orphan continuation tag(s)", fixes)
    return repaired


def extract_spans(tags: Sequence[str], text: str | None = None) -> tuple[EntitySpan, ...]:
    """Maximal B I* runs as half-open spans, after orphan repair.

    With ``text`` given, its length must match the tags and each span
    carries its surface substring.
    """
    if text is not None and len(text) != len(tags):
        raise LengthMismatchError(f"{len(tags)} tags for {len(text)} characters")

    def make(start: int, end: int, label: str | None) -> EntitySpan:
        surface = text[start:end] if text is not None else None
        return EntitySpan(start, end, label, surface)

    spans: list[EntitySpan] = []
    start = None
    span_label = None
    for i, tag in enumerate(repair_bio(tags)):
        prefix, label = _split_tag(tag)
        if prefix == "B":
            if start is not None:
                spans.append(make(start, i, span_label))
            start, span_label = i, label
        elif prefix == OUTSIDE and start is not None:
            spans.append(make(start, i, span_label))
            start = None
    if start is not None:
        spans.append(make(start, len(tags), span_label))
    return tuple(spans)


@dataclass(frozen=True)
class TaggedUtterance:
    """Character sequence with one tag per character."""

    text: str
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tags) != len(self.text):
            raise LengthMismatchError(
                f"{len(self.tags)} tags for {len(self.text)} characters")
        for tag in self.tags:
            _split_tag(tag)  # raises on malformed tags

    @property
    def spans(self) -> tuple[EntitySpan, ...]:
        return extract_spans(self.tags, self.text)


def tags_from_spans(length: int, spans: Sequence[EntitySpan]) -> list[str]:
    """Inverse of extract_spans for non-overlapping spans within [0, length)."""
    tags = [OUTSIDE] * length
    for span in sorted(spans, key=lambda s: s.start):
        if span.end > length:
            raise SpanOutOfBoundsError(
                f"span [{span.start}, {span.end}) exceeds sequence length {length}")
        if any(t != OUTSIDE for t in tags[span.start:span.end]):
            raise OverlappingSpansError(
                f"span [{span.start}, {span.end}) overlaps an earlier span")
        tags[span.start] = "B" if span.label is None else f"B-{span.label}"
        for i in range(span.start + 1, span.end):
            tags[i] = "I" if span.label is None else f"I-{span.label}"
    return tags


def align_tags_to_hypothesis(ref: TaggedUtterance, hyp_text: str) -> list[str]:
    """Project reference tags onto a hypothesis through a character alignment.

    Matched and substituted hypothesis characters inherit the reference tag,
    inserted characters get "O", deleted ones vanish.  The projection can
    strand an "I" (e.g. an insertion splitting a span), so the result is
    repaired before returning.
    """
    if not ref.text or not hyp_text:
        raise EmptyInputError("tag projection needs non-empty texts")
    hyp_tags = [OUTSIDE] * len(hyp_text)
    for op in align(ref.text, hyp_text):
        if op.kind in (OpKind.MATCH, OpKind.SUBSTITUTE):
            hyp_tags[op.hyp_index] = ref.tags[op.ref_index]
        elif op.kind == OpKind.INSERT:
            hyp_tags[op.hyp_index] = OUTSIDE
    return repair_bio(hyp_tags)


@dataclass(frozen=True)
class RlmExample:
    """One masked training example.

    ``input`` is the character sequence, a separator, then the tag sequence,
    with masked positions replaced by the mask token.  ``masked`` lists the
    masked indices in ascending order and ``target`` holds the original token
    at each of them.
    """

    input: tuple[str, ...]
    masked: tuple[int, ...]
    target: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "input": list(self.input),
            "masked": list(self.masked),
            "target": list(self.target),
        }


def build_rlm_example(
    tagged: TaggedUtterance,
    mask_fraction: float = 0.3,
    rng_seed: int = 0,
) -> RlmExample:
    """Build one recognizer training example from a tagged sentence.

    The tag segment is always fully masked (it is what the model must
    produce).  On the text side, floor(mask_fraction * count) of the
    non-entity characters are masked as well, never entity characters, so
    the model learns to reconstruct context while keeping entity evidence
    visible.  Sampling is driven entirely by ``rng_seed``.
    """
    if not 0.0 <= mask_fraction <= 1.0:
        raise ValueError(f"mask_fraction must be in [0, 1], got {mask_fraction}")
    text = tagged.text
    tags = repair_bio(tagged.tags)
    n = len(text)
    non_entity = [i for i, tag in enumerate(tags) if tag == OUTSIDE]
    count = int(mask_fraction * len(non_entity))
    rng = random.Random(rng_seed)
    masked_text = sorted(rng.sample(non_entity, count))
    masked_set = set(masked_text)

    tokens: list[str] = []
    for i, ch in enumerate(text):
        tokens.append(MASK_TOKEN if i in masked_set else ch)
    tokens.append(SEP_TOKEN)
    tokens.extend(MASK_TOKEN for _ in range(n))

    masked = list(masked_text) + [n + 1 + i for i in range(n)]
    target = [text[i] for i in masked_text] + list(tags)
    return RlmExample(tuple(tokens), tuple(masked), tuple(target))


def dictionary_tagger(
    text: str,
    repo: EntityRepository,
    threshold: float = 0.9,
    max_len: int | None = None,
) -> list[str]:
    """Tag likely entity mentions by phonetic lookup against the repository.

    Every window of 2..max-entity-length characters is scored against its
    best repository match; windows at or above ``threshold`` become spans,
    with overlaps resolved greedily by higher similarity, then longer
    window, then leftmost.  This is the weak labeller used to bootstrap
    tags for untagged text; it stays conservative at sensible thresholds.

    Romanization failures (characters outside the dictionary) propagate.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    tags = [OUTSIDE] * len(text)
    if len(repo) == 0 or len(text) < 2:
        return tags
    limit = max_len if max_len is not None else repo.max_surface_length()
    limit = max(2, min(limit, len(text)))

    def best_match(window_ph) -> tuple[float, Entity]:
        best: tuple[float, Entity] | None = None
        for entity in repo:
            sim = similarity(entity.phonetic, window_ph)
            if best is None or sim > best[0] or (
                sim == best[0]
                and (len(entity.surface), entity.surface)
                < (len(best[1].surface), best[1].surface)
            ):
                best = (sim, entity)
        return best

    hits: list[tuple[int, int, float, Entity]] = []
    for start in range(len(text) - 1):
        for width in range(2, limit + 1):
            end = start + width
            if end > len(text):
                break
            sim, entity = best_match(repo.romanize(text[start:end]))
            if sim >= threshold:
                hits.append((start, width, sim, entity))

    taken = [False] * len(text)
    for start, width, _sim, entity in sorted(
        hits, key=lambda h: (-h[2], -h[1], h[0])
    ):
        if any(taken[start:start + width]):
            continue
        for i in range(start, start + width):
            taken[i] = True
        label = entity.type_label.value
        tags[start] = f"B-{label}"
        for i in range(start + 1, start + width):
            tags[i] = f"I-{label}"
    return tags
