"""Self-generated preference data for adaptive reasoning.

The builder probes each correction problem twice: a direct (nothink) pass
and, where that fails, a reasoning (think) pass.  Problems the model solves
directly are "simple"; ones needing reasoning are "challenging"; ones it
only solves after the prompt is augmented with a hint naming the correct
answer are "formidable" (rejection sampling, bounded attempts).  Unsolved
problems land in a discard report, never silently dropped.

Preference pairs then teach mode selection: simple problems prefer the
direct response over the reasoning one, everything else the reverse.  An
optional balancing step equalizes the two orientations.  The pairwise
preference loss and its gradient are provided as pure functions so an
external trainer (or a test) can consume the emitted pairs.
"""

from __future__ import annotations

import math
import random
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .backend import Backend, BackendRequest, Mode, SamplingParams
from .correction import (
    DEFAULT_GRAMMAR,
    CorrectionRequest,
    ModelResponse,
    ModeDirective,
    PromptTemplates,
    ResponseGrammar,
    parse_response,
    render_prompt,
)
from .errors import (
    BackendError,
    MalformedResponseError,
    MissingResponseError,
    NonFiniteInputError,
)
from .ner import EntitySpan
from .repository import RankedCandidates

HINT_TEMPLATE_ID = "hint"


class DifficultyClass(Enum):
    SIMPLE = "simple"
    CHALLENGING = "challenging"
    FORMIDABLE = "formidable"


@dataclass(frozen=True)
class ProblemRecord:
    """One correction question with its known-correct answer."""

    id: str
    hypothesis: str
    ground_truth: str
    candidates: RankedCandidates
    span: EntitySpan | None = None
    prompt_template_id: str = "correction"
    rendered_prompt: str | None = None

    def __post_init__(self):
        if not self.ground_truth:
            raise ValueError(f"problem {self.id}: ground_truth must be non-empty")
        if len(self.candidates) == 0:
            raise ValueError(f"problem {self.id}: candidate list must be non-empty")
        if self.span is None and self.rendered_prompt is None:
            raise ValueError(
                f"problem {self.id}: needs a span to render a prompt from, "
                "or a pre-rendered prompt")

    def prompt_text(
        self,
        templates: PromptTemplates,
        grammar: ResponseGrammar = DEFAULT_GRAMMAR,
    ) -> str:
        if self.rendered_prompt is not None:
            return self.rendered_prompt
        request = CorrectionRequest(
            hypothesis=self.hypothesis,
            span=self.span,
            candidates=self.candidates,
            prompt_template_id=self.prompt_template_id,
            mode_directive=ModeDirective.AUTO,
        )
        return render_prompt(request, templates, grammar)


def check_answer(response: ModelResponse | str, ground_truth: str) -> bool:
    """Exact equality after NFC normalization, whitespace-stripped answer."""
    answer = response.answer if isinstance(response, ModelResponse) else response
    return (unicodedata.normalize("NFC", answer).strip()
            == unicodedata.normalize("NFC", ground_truth))


@dataclass
class ClassifiedProblem:
    problem: ProblemRecord
    difficulty: DifficultyClass
    prompt: str
    responses: dict[Mode, ModelResponse]
    hint_attempts_used: int = 0


@dataclass(frozen=True)
class DiscardedProblem:
    """Problem unsolved even with hints; every failed response kept."""

    problem_id: str
    prompt: str
    attempts: tuple[ModelResponse, ...]

    def to_json_dict(self) -> dict:
        return {
            "id": self.problem_id,
            "prompt": self.prompt,
            "responses": [r.to_json_dict() for r in self.attempts],
        }


@dataclass(frozen=True)
class ProbeFailure:
    """Backend gave up on this problem; it is reported, not dropped."""

    problem_id: str
    stage: str  # "nothink" | "think" | "hint"
    error: str


@dataclass
class ClassificationResult:
    classified: list[ClassifiedProblem] = field(default_factory=list)
    discarded: list[DiscardedProblem] = field(default_factory=list)
    failures: list[ProbeFailure] = field(default_factory=list)

    def by_difficulty(self, difficulty: DifficultyClass) -> list[ClassifiedProblem]:
        return [c for c in self.classified if c.difficulty is difficulty]

    @property
    def simple(self) -> list[ClassifiedProblem]:
        return self.by_difficulty(DifficultyClass.SIMPLE)

    @property
    def challenging(self) -> list[ClassifiedProblem]:
        return self.by_difficulty(DifficultyClass.CHALLENGING)

    @property
    def formidable(self) -> list[ClassifiedProblem]:
        return self.by_difficulty(DifficultyClass.FORMIDABLE)


def _probe(
    backend: Backend,
    prompt: str,
    mode: Mode,
    sampling: SamplingParams,
    request_id: str,
    grammar: ResponseGrammar,
) -> ModelResponse:
    reply = backend.invoke(BackendRequest(
        prompt=prompt, mode=mode, sampling=sampling, request_id=request_id))
    try:
        return parse_response(reply.text, reply.token_count, grammar)
    except MalformedResponseError as exc:
        # a reply with no answer block simply counts as incorrect
        return exc.partial


def hint_text(
    ground_truth: str,
    templates: PromptTemplates,
    grammar: ResponseGrammar = DEFAULT_GRAMMAR,
) -> str:
    return templates.render(HINT_TEMPLATE_ID, {
        "ground_truth": ground_truth,
        "answer_open": grammar.answer_open,
        "answer_close": grammar.answer_close,
    })


def classify_problems(
    problems: Sequence[ProblemRecord],
    backend: Backend,
    templates: PromptTemplates,
    grammar: ResponseGrammar = DEFAULT_GRAMMAR,
    sampling: SamplingParams = SamplingParams(),
    hint_attempts: int = 4,
    jobs: int = 1,
) -> ClassificationResult:
    """Partition problems by how much reasoning the backend needs.

    Direct probe on everything; reasoning probe on what failed; bounded
    hinted reasoning probes on what still failed, keeping the first correct
    response.  The three classes plus the discard report partition the
    input exactly.  Backend failures skip the problem into the failure list.
    Probes for distinct problems may run on ``jobs`` threads; results are
    merged in input order.
    """
    if hint_attempts < 1:
        raise ValueError(f"hint_attempts must be >= 1, got {hint_attempts}")
    result = ClassificationResult()
    order: dict[str, int] = {p.id: i for i, p in enumerate(problems)}

    def run_stage(items: list, work: Callable) -> list:
        if jobs > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(work, items))
        return [work(item) for item in items]

    prompts = {p.id: p.prompt_text(templates, grammar) for p in problems}

    # direct probe on the whole question set
    def probe_nothink(problem: ProblemRecord):
        try:
            return _probe(backend, prompts[problem.id], Mode.NOTHINK, sampling,
                          f"{problem.id}:nothink", grammar)
        except BackendError as exc:
            return ProbeFailure(problem.id, "nothink", str(exc))

    hard: list[tuple[ProblemRecord, ModelResponse]] = []
    for problem, outcome in zip(problems, run_stage(list(problems), probe_nothink)):
        if isinstance(outcome, ProbeFailure):
            result.failures.append(outcome)
        elif check_answer(outcome, problem.ground_truth):
            result.classified.append(ClassifiedProblem(
                problem, DifficultyClass.SIMPLE, prompts[problem.id],
                {Mode.NOTHINK: outcome}))
        else:
            hard.append((problem, outcome))

    # reasoning probe on what the direct pass missed
    def probe_think(item: tuple[ProblemRecord, ModelResponse]):
        problem, _ = item
        try:
            return _probe(backend, prompts[problem.id], Mode.THINK, sampling,
                          f"{problem.id}:think", grammar)
        except BackendError as exc:
            return ProbeFailure(problem.id, "think", str(exc))

    stubborn: list[tuple[ProblemRecord, ModelResponse, ModelResponse]] = []
    for (problem, nothink_resp), outcome in zip(hard, run_stage(hard, probe_think)):
        if isinstance(outcome, ProbeFailure):
            result.failures.append(outcome)
        elif check_answer(outcome, problem.ground_truth):
            result.classified.append(ClassifiedProblem(
                problem, DifficultyClass.CHALLENGING, prompts[problem.id],
                {Mode.NOTHINK: nothink_resp, Mode.THINK: outcome}))
        else:
            stubborn.append((problem, nothink_resp, outcome))

    # hinted rejection sampling on the rest
    def probe_hinted(item: tuple[ProblemRecord, ModelResponse, ModelResponse]):
        problem, nothink_resp, think_resp = item
        prompt = prompts[problem.id]
        hinted = prompt + "\n" + hint_text(problem.ground_truth, templates, grammar)
        attempts: list[ModelResponse] = []
        for attempt in range(hint_attempts):
            try:
                response = _probe(backend, hinted, Mode.THINK, sampling,
                                  f"{problem.id}:hint{attempt}", grammar)
            except BackendError as exc:
                return ProbeFailure(problem.id, "hint", str(exc))
            if check_answer(response, problem.ground_truth):
                return ClassifiedProblem(
                    problem, DifficultyClass.FORMIDABLE, prompt,
                    {Mode.NOTHINK: nothink_resp, Mode.THINK: response},
                    hint_attempts_used=attempt + 1)
            attempts.append(response)
        return DiscardedProblem(
            problem.id, prompt,
            tuple([nothink_resp, think_resp] + attempts))

    for outcome in run_stage(stubborn, probe_hinted):
        if isinstance(outcome, ProbeFailure):
            result.failures.append(outcome)
        elif isinstance(outcome, DiscardedProblem):
            result.discarded.append(outcome)
        else:
            result.classified.append(outcome)

    result.classified.sort(key=lambda c: order[c.problem.id])
    result.discarded.sort(key=lambda d: order[d.problem_id])
    result.failures.sort(key=lambda f: order[f.problem_id])
    return result


@dataclass(frozen=True)
class PreferencePair:
    """One training pair: same prompt, a preferred and a dispreferred reply."""

    problem_id: str
    prompt: str
    preferred: ModelResponse
    dispreferred: ModelResponse
    difficulty: DifficultyClass

    def __post_init__(self):
        if (self.preferred.answer == self.dispreferred.answer
                and self.preferred.mode is self.dispreferred.mode):
            raise ValueError(
                f"pair {self.problem_id}: responses are indistinguishable")
        want_preferred = (Mode.NOTHINK if self.difficulty is DifficultyClass.SIMPLE
                          else Mode.THINK)
        if self.preferred.mode is not want_preferred:
            raise ValueError(
                f"pair {self.problem_id}: {self.difficulty.value} problems must "
                f"prefer the {want_preferred.value} response")
        if self.dispreferred.mode is want_preferred:
            raise ValueError(
                f"pair {self.problem_id}: both responses are {want_preferred.value}")

    @property
    def preferred_mode(self) -> str:
        return self.preferred.mode.value

    def to_json_dict(self) -> dict:
        return {
            "id": self.problem_id,
            "prompt": self.prompt,
            "preferred": self.preferred.raw,
            "dispreferred": self.dispreferred.raw,
            "difficulty": self.difficulty.value,
            "preferred_mode": self.preferred_mode,
        }


def build_preference_pairs(
    classified: Sequence[ClassifiedProblem],
    balance: bool = True,
    rng_seed: int = 0,
    backend: Backend | None = None,
    templates: PromptTemplates | None = None,
    grammar: ResponseGrammar = DEFAULT_GRAMMAR,
    sampling: SamplingParams = SamplingParams(),
) -> list[PreferencePair]:
    """Turn classified problems into preference pairs.

    Simple problems prefer their direct response over a reasoning response;
    since classification never probes reasoning for problems the
    direct pass already solved, that response is probed lazily here (hence
    the optional backend).  Everything else prefers its reasoning response.

    With ``balance`` set, the larger orientation group is down-sampled with
    the seeded generator until direct-preferred and reasoning-preferred
    pairs are equal in count; input order is preserved either way.
    """
    pairs: list[PreferencePair] = []
    for item in classified:
        responses = item.responses
        if Mode.THINK not in responses:
            if item.difficulty is not DifficultyClass.SIMPLE or backend is None:
                raise MissingResponseError(item.problem.id, Mode.THINK.value)
            if templates is None:
                raise MissingResponseError(item.problem.id, Mode.THINK.value)
            responses[Mode.THINK] = _probe(
                backend, item.prompt, Mode.THINK, sampling,
                f"{item.problem.id}:think", grammar)
        if Mode.NOTHINK not in responses:
            raise MissingResponseError(item.problem.id, Mode.NOTHINK.value)
        if item.difficulty is DifficultyClass.SIMPLE:
            preferred, dispreferred = responses[Mode.NOTHINK], responses[Mode.THINK]
        else:
            preferred, dispreferred = responses[Mode.THINK], responses[Mode.NOTHINK]
        pairs.append(PreferencePair(
            item.problem.id, item.prompt, preferred, dispreferred, item.difficulty))

    if not balance:
        return pairs
    direct = [p for p in pairs if p.difficulty is DifficultyClass.SIMPLE]
    reasoning = [p for p in pairs if p.difficulty is not DifficultyClass.SIMPLE]
    rng = random.Random(rng_seed)
    target = min(len(direct), len(reasoning))

    def down_sample(group: list[PreferencePair]) -> set[str]:
        keep = rng.sample(range(len(group)), target)
        return {group[i].problem_id for i in keep}

    keep_ids = set()
    keep_ids |= (down_sample(direct) if len(direct) > target
                 else {p.problem_id for p in direct})
    keep_ids |= (down_sample(reasoning) if len(reasoning) > target
                 else {p.problem_id for p in reasoning})
    return [p for p in pairs if p.problem_id in keep_ids]


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _softplus(x: float) -> float:
    # log(1 + e^x) without overflow on large |x|
    if x >= 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _check_finite(beta: float, values: tuple[float, ...]) -> None:
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if not math.isfinite(beta) or any(not math.isfinite(v) for v in values):
        raise NonFiniteInputError("log-probabilities and beta must be finite")


def reward_margin(
    logp_policy_pref: float,
    logp_policy_disp: float,
    logp_ref_pref: float,
    logp_ref_disp: float,
) -> float:
    """Implicit-reward difference between preferred and dispreferred."""
    return (logp_policy_pref - logp_ref_pref) - (logp_policy_disp - logp_ref_disp)


def dpo_loss(
    logp_policy_pref: float,
    logp_policy_disp: float,
    logp_ref_pref: float,
    logp_ref_disp: float,
    beta: float = 0.1,
) -> float:
    """Pairwise preference loss -log sigmoid(beta * margin).

    Stable for |beta * margin| well past 1e4; strictly positive, ln 2 at
    zero margin, decreasing as the margin grows.
    """
    values = (logp_policy_pref, logp_policy_disp, logp_ref_pref, logp_ref_disp)
    _check_finite(beta, values)
    margin = reward_margin(*values)
    return _softplus(-beta * margin)


def dpo_loss_gradient(
    logp_policy_pref: float,
    logp_policy_disp: float,
    logp_ref_pref: float,
    logp_ref_disp: float,
    beta: float = 0.1,
) -> tuple[float, float, float, float]:
    """Gradient of dpo_loss w.r.t. its four log-probabilities, in order."""
    values = (logp_policy_pref, logp_policy_disp, logp_ref_pref, logp_ref_disp)
    _check_finite(beta, values)
    margin = reward_margin(*values)
    g = beta * _sigmoid(-beta * margin)
    return (-g, +g, +g, -g)
