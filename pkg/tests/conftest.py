"""Shared fixtures plus a terminal summary for the acceptance suite.

Tests marked ``@pytest.mark.criterion(n, title)`` report one PASS/FAIL line
each at the end of the run, so the acceptance gate is readable at a glance.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import pytest

from entcorr.backend import BackendReply, Mode, ScriptedBackend, ScriptedRule
from entcorr.correction import DEFAULT_GRAMMAR, PromptTemplates
from entcorr.phonetics import PhoneticSequence, PinyinDictionary, PinyinSyllable
from entcorr.repository import (
    Entity,
    EntityType,
    RankedCandidate,
    RankedCandidates,
    RepositoryConfig,
    build_repository,
    load_entity_file,
)
from entcorr.selftrain import ProblemRecord, hint_text

DATA_DIR = Path(__file__).parent / "data"

_criteria_results: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call":
        _criteria_results[number] = (title, "PASS" if report.passed else "FAIL")
    elif report.when == "setup" and not report.passed:
        _criteria_results[number] = (title, "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria_results):
        title, status = _criteria_results[number]
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {title}")


def bundled(name: str) -> Path:
    return Path(str(resources.files("entcorr.data").joinpath(name)))


@pytest.fixture(scope="session")
def dictionary() -> PinyinDictionary:
    return PinyinDictionary.from_tsv(bundled("pinyin_dict.tsv"))


@pytest.fixture(scope="session")
def desk_repo(dictionary):
    records = load_entity_file(bundled("entities_demo.tsv"))
    return build_repository(records, RepositoryConfig(dictionary))


@pytest.fixture(scope="session")
def templates() -> PromptTemplates:
    return PromptTemplates.load_default()


def dummy_candidates() -> RankedCandidates:
    """Minimal one-entry candidate list for problems that never render."""
    ph = PhoneticSequence((PinyinSyllable(None, "a", 0),))
    entity = Entity("甲", EntityType.UNKNOWN, ph)
    return RankedCandidates("q", (RankedCandidate(entity, 1.0, 1.0),))


@dataclass(frozen=True)
class ProbeProfile:
    """Scripted behavior of one problem across the three probe stages.

    ``hint_success_attempt`` is the 0-based hinted attempt that answers
    correctly, or None when no hinted attempt ever does.
    """

    problem_id: str
    nothink_ok: bool
    think_ok: bool
    hint_success_attempt: int | None = None

    def expected_class(self, hint_attempts: int) -> str:
        if self.nothink_ok:
            return "simple"
        if self.think_ok:
            return "challenging"
        if (self.hint_success_attempt is not None
                and self.hint_success_attempt < hint_attempts):
            return "formidable"
        return "discarded"


def build_probe_scenario(
    profiles: list[ProbeProfile],
    templates: PromptTemplates,
    hint_attempts: int = 4,
) -> tuple[list[ProblemRecord], ScriptedBackend]:
    """Problems plus a scripted backend realizing the given probe outcomes.

    Each problem gets a distinct ground truth, so the hint text (which quotes
    the truth) is a problem-specific match key for hinted-probe rules.
    """
    problems: list[ProblemRecord] = []
    rules: list[ScriptedRule] = []
    for profile in profiles:
        marker = f"PROBLEM[{profile.problem_id}]"
        truth = f"真相{profile.problem_id}"
        problems.append(ProblemRecord(
            id=profile.problem_id,
            hypothesis="x",
            ground_truth=truth,
            candidates=dummy_candidates(),
            rendered_prompt=f"{marker} 请选择正确实体。",
        ))
        right = f"<answer>{truth}</answer>"
        right_think = f"<think>推理。</think><answer>{truth}</answer>"
        wrong = "<answer>KEEP</answer>"
        wrong_think = "<think>没有把握。</think><answer>KEEP</answer>"

        # hinted rules first: a hinted prompt still contains the plain
        # prompt, and the first matching rule wins
        hint_key = hint_text(truth, templates)[:30]
        if profile.hint_success_attempt is None:
            rules.append(ScriptedRule(hint_key, wrong_think, Mode.THINK))
        else:
            for a in range(profile.hint_success_attempt):
                rules.append(ScriptedRule(hint_key, wrong_think, Mode.THINK, a))
            rules.append(ScriptedRule(
                hint_key, right_think, Mode.THINK, profile.hint_success_attempt))
            # later attempts never happen; no rule needed for them
        rules.append(ScriptedRule(
            marker, right_think if profile.think_ok else wrong_think, Mode.THINK))
        rules.append(ScriptedRule(
            marker, right if profile.nothink_ok else wrong, Mode.NOTHINK))
    backend = ScriptedBackend(rules, default=None)
    return problems, backend


@pytest.fixture
def three_problem_scenario(templates):
    """One problem per difficulty class; formidable succeeds on hint try 2."""
    profiles = [
        ProbeProfile("prob-simple", nothink_ok=True, think_ok=True),
        ProbeProfile("prob-challenging", nothink_ok=False, think_ok=True),
        ProbeProfile("prob-formidable", nothink_ok=False, think_ok=False,
                     hint_success_attempt=1),
    ]
    problems, backend = build_probe_scenario(profiles, templates)
    return profiles, problems, backend


def scripted_reply(text: str, tokens: int | None = None) -> BackendReply:
    return BackendReply(text=text, token_count=tokens)
