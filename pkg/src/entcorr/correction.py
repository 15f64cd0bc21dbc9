"""Correction prompt assembly, response parsing, candidate splicing, and
run statistics.

The model gets the hypothesis, the flagged span, a ranked candidate list and
a keep-original option, and must answer with exactly one candidate surface
(or the keep token) inside answer delimiters.  Free-form rewrites are
rejected: an answer outside the candidate set falls back to keeping the
original, so the correction can never leave the retrieval set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .backend import Backend, BackendRequest, BackendReply, Mode, SamplingParams
from .errors import (
    EmptyResultsError,
    MalformedResponseError,
    SpanOutOfBoundsError,
    UnknownTemplateError,
)
from .ner import EntitySpan
from .repository import Entity, RankedCandidates

KEEP_TOKEN = "KEEP"


class KeepOriginal:
    """Sentinel choice: leave the span as the recognizer produced it."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "KeepOriginal"


KEEP_ORIGINAL = KeepOriginal()


class ModeDirective(Enum):
    AUTO = "auto"
    FORCE_THINK = "think"
    FORCE_NOTHINK = "nothink"

    def to_mode(self) -> Mode:
        return Mode(self.value)


@dataclass(frozen=True)
class ResponseGrammar:
    """Delimiters the model is instructed to emit.

    Mode detection is structural: a complete reasoning block (both markers
    present) means the reply came from the thinking mode.
    """

    think_open: str = "<think>"
    think_close: str = "</think>"
    answer_open: str = "<answer>"
    answer_close: str = "</answer>"


DEFAULT_GRAMMAR = ResponseGrammar()


@dataclass(frozen=True)
class ModelResponse:
    mode: Mode
    reasoning: str | None
    answer: str
    raw: str
    token_count: int
    token_count_from_backend: bool

    def __post_init__(self):
        if self.mode not in (Mode.THINK, Mode.NOTHINK):
            raise ValueError("a parsed response is either think or nothink")
        # structural rule: a reasoning block (even an empty one) is exactly
        # what makes a response think-mode
        if (self.mode is Mode.THINK) != (self.reasoning is not None):
            raise ValueError("think mode and a reasoning block must co-occur")
        if self.token_count < 0:
            raise ValueError(f"token_count must be >= 0, got {self.token_count}")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "reasoning": self.reasoning,
            "answer": self.answer,
            "raw": self.raw,
            "token_count": self.token_count,
            "token_count_from_backend": self.token_count_from_backend,
        }


@dataclass(frozen=True)
class CorrectionRequest:
    hypothesis: str
    span: EntitySpan
    candidates: RankedCandidates
    prompt_template_id: str = "correction"
    mode_directive: ModeDirective = ModeDirective.AUTO

    def __post_init__(self):
        if self.span.end > len(self.hypothesis):
            raise SpanOutOfBoundsError(
                f"span [{self.span.start}, {self.span.end}) exceeds hypothesis "
                f"length {len(self.hypothesis)}")
        if len(self.candidates) == 0:
            raise ValueError("candidate list must be non-empty")

    @property
    def span_text(self) -> str:
        return self.hypothesis[self.span.start:self.span.end]


@dataclass(frozen=True)
class CorrectionResult:
    corrected_text: str
    chosen: Entity | KeepOriginal
    response: ModelResponse
    mode_used: Mode
    span: EntitySpan
    fallback_reason: str | None = None  # None | "malformed" | "not_in_candidates"

    def to_json_dict(self) -> dict:
        chosen = None if isinstance(self.chosen, KeepOriginal) else self.chosen.surface
        return {
            "corrected_text": self.corrected_text,
            "chosen": chosen,
            "mode_used": self.mode_used.value,
            "span": [self.span.start, self.span.end],
            "fallback_reason": self.fallback_reason,
            "response": self.response.to_json_dict(),
        }


_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_-]+)\]\s*$")


class PromptTemplates:
    """Named templates from a plain-text file.

    Format: ``[name]`` section headers, bodies in between.  Placeholders are
    ``{hypothesis}``, ``{span_text}``, ``{span_start}``, ``{span_end}``,
    ``{candidates}``, ``{keep_token}``, ``{answer_open}``, ``{answer_close}``
    and ``{hint}``; substitution is literal token replacement, so braces in
    template prose are safe.
    """

    def __init__(self, templates: dict[str, str]):
        self._templates = dict(templates)

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def names(self) -> list[str]:
        return sorted(self._templates)

    @classmethod
    def from_text(cls, text: str) -> "PromptTemplates":
        templates: dict[str, str] = {}
        name: str | None = None
        lines: list[str] = []

        def flush():
            if name is not None:
                templates[name] = "\n".join(lines).strip("\n")

        for line in text.splitlines():
            m = _SECTION_RE.match(line)
            if m:
                flush()
                name, lines = m.group(1), []
            elif name is not None:
                lines.append(line)
        flush()
        return cls(templates)

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplates":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def load_default(cls) -> "PromptTemplates":
        text = resources.files("entcorr.data").joinpath("templates.txt").read_text(
            encoding="utf-8")
        return cls.from_text(text)

    def render(self, template_id: str, mapping: dict[str, str]) -> str:
        if template_id not in self._templates:
            raise UnknownTemplateError(
                f"no template {template_id!r}; have {', '.join(self.names())}")
        out = self._templates[template_id]
        for key, value in mapping.items():
            out = out.replace("{" + key + "}", value)
        return out


def format_candidates(candidates: RankedCandidates) -> str:
    """Rank-ordered candidate block, one line per entry with similarity."""
    lines = []
    for rank, item in enumerate(candidates.items, start=1):
        label = item.entity.type_label.value
        lines.append(
            f"{rank}. {item.entity.surface} [{label}] "
            f"(similarity {item.similarity:.4f})")
    return "\n".join(lines)


def render_prompt(
    request: CorrectionRequest,
    templates: PromptTemplates,
    grammar: ResponseGrammar = DEFAULT_GRAMMAR,
    hint: str = "",
) -> str:
    """Deterministic prompt text for one span correction."""
    return templates.render(request.prompt_template_id, {
        "hypothesis": request.hypothesis,
        "span_text": request.span_text,
        "span_start": str(request.span.start),
        "span_end": str(request.span.end),
        "candidates": format_candidates(request.candidates),
        "keep_token": KEEP_TOKEN,
        "answer_open": grammar.answer_open,
        "answer_close": grammar.answer_close,
        "hint": hint,
    })


def _last_delimited(text: str, open_marker: str, close_marker: str) -> str | None:
    end = text.rfind(close_marker)
    while end != -1:
        start = text.rfind(open_marker, 0, end)
        if start != -1:
            return text[start + len(open_marker):end]
        end = text.rfind(close_marker, 0, end)
    return None


def parse_response(
    raw: str,
    token_count: int | None = None,
    grammar: ResponseGrammar = DEFAULT_GRAMMAR,
) -> ModelResponse:
    """Split a raw reply into mode, reasoning, and the final answer.

    A complete reasoning block (open and close markers both present) makes
    the reply Think-mode; the answer is then searched only after the block,
    so trial answers inside the reasoning do not count.  Without a backend
    token count the character length of the raw text stands in, flagged.

    Raises MalformedResponseError when no answer delimiters are found; the
    partially parsed response rides on the exception so callers can fall
    back to keeping the original span.
    """
    reasoning: str | None = None
    answer_zone = raw
    mode = Mode.NOTHINK
    open_at = raw.find(grammar.think_open)
    if open_at != -1:
        close_at = raw.find(grammar.think_close, open_at + len(grammar.think_open))
        if close_at != -1:
            mode = Mode.THINK
            reasoning = raw[open_at + len(grammar.think_open):close_at]
            answer_zone = raw[close_at + len(grammar.think_close):]
    count = token_count if token_count is not None else len(raw)
    answer = _last_delimited(answer_zone, grammar.answer_open, grammar.answer_close)
    if answer is None:
        partial = ModelResponse(
            mode=mode, reasoning=reasoning, answer="", raw=raw,
            token_count=count, token_count_from_backend=token_count is not None)
        raise MalformedResponseError(
            f"no {grammar.answer_open}...{grammar.answer_close} pair in reply",
            partial=partial)
    return ModelResponse(
        mode=mode, reasoning=reasoning, answer=answer.strip(), raw=raw,
        token_count=count, token_count_from_backend=token_count is not None)


def apply_correction(
    hypothesis: str, span: EntitySpan, chosen: Entity | KeepOriginal | str,
) -> str:
    """Splice the chosen surface into the span; everything else untouched."""
    if span.end > len(hypothesis):
        raise SpanOutOfBoundsError(
            f"span [{span.start}, {span.end}) exceeds hypothesis length "
            f"{len(hypothesis)}")
    if isinstance(chosen, KeepOriginal):
        return hypothesis
    surface = chosen if isinstance(chosen, str) else chosen.surface
    return hypothesis[:span.start] + surface + hypothesis[span.end:]


def apply_corrections(
    hypothesis: str,
    corrections: Sequence[tuple[EntitySpan, Entity | KeepOriginal | str]],
) -> str:
    """Apply several span corrections to one utterance.

    Splices run right-to-left so earlier spans keep their offsets even when
    replacements change the length.
    """
    ordered = sorted(corrections, key=lambda c: c[0].start, reverse=True)
    out = hypothesis
    for span, chosen in ordered:
        out = apply_correction(out, span, chosen)
    return out


def resolve_choice(
    response: ModelResponse, candidates: RankedCandidates,
) -> tuple[Entity | KeepOriginal, str | None]:
    """Map a parsed answer onto the candidate set.

    Returns (choice, fallback_reason); an answer that is neither the keep
    token nor a candidate surface keeps the original, flagged.
    """
    answer = response.answer.strip()
    if answer == KEEP_TOKEN:
        return KEEP_ORIGINAL, None
    for item in candidates.items:
        if item.entity.surface == answer:
            return item.entity, None
    return KEEP_ORIGINAL, "not_in_candidates"


def correct_span(
    request: CorrectionRequest,
    backend: Backend,
    templates: PromptTemplates,
    grammar: ResponseGrammar = DEFAULT_GRAMMAR,
    sampling: SamplingParams = SamplingParams(),
    request_id: str = "",
) -> CorrectionResult:
    """Render, invoke, parse, splice: one span end to end.

    Malformed replies never abort the pipeline; they resolve to keeping the
    original span with the failure recorded on the result.
    """
    prompt = render_prompt(request, templates, grammar)
    reply: BackendReply = backend.invoke(BackendRequest(
        prompt=prompt,
        mode=request.mode_directive.to_mode(),
        sampling=sampling,
        request_id=request_id,
    ))
    try:
        response = parse_response(reply.text, reply.token_count, grammar)
        chosen, reason = resolve_choice(response, request.candidates)
    except MalformedResponseError as exc:
        response = exc.partial
        chosen, reason = KEEP_ORIGINAL, "malformed"
    corrected = apply_correction(request.hypothesis, request.span, chosen)
    return CorrectionResult(
        corrected_text=corrected,
        chosen=chosen,
        response=response,
        mode_used=response.mode,
        span=request.span,
        fallback_reason=reason,
    )


@dataclass(frozen=True)
class RunStats:
    """Aggregate response behavior over a correction run."""

    total: int
    think_count: int
    nothink_count: int
    mean_token_count: float
    nothink_ratio: float
    char_count_fallbacks: int

    def to_json_dict(self) -> dict:
        return {
            "total": self.total,
            "think_count": self.think_count,
            "nothink_count": self.nothink_count,
            "mean_token_count": self.mean_token_count,
            "nothink_ratio": self.nothink_ratio,
            "char_count_fallbacks": self.char_count_fallbacks,
        }


def run_stats(results: Iterable[CorrectionResult | ModelResponse]) -> RunStats:
    """Mean token count over every response plus the nothink share.

    The mean deliberately pools both modes.  Results whose token count came
    from the character-length fallback are tallied so mixed counting is
    visible.  Accepts either full correction results or bare responses.
    """
    responses = [r.response if isinstance(r, CorrectionResult) else r
                 for r in results]
    if not responses:
        raise EmptyResultsError("no correction results to summarize")
    total = len(responses)
    nothink = sum(1 for r in responses if r.mode is Mode.NOTHINK)
    fallbacks = sum(1 for r in responses if not r.token_count_from_backend)
    mean = sum(r.token_count for r in responses) / total
    return RunStats(
        total=total,
        think_count=total - nothink,
        nothink_count=nothink,
        mean_token_count=mean,
        nothink_ratio=nothink / total,
        char_count_fallbacks=fallbacks,
    )
