"""Pipeline configuration: a YAML file of nested sections, with every
relative path resolved against the config file's own directory.

The ``builtin:`` prefix points a path at the package's bundled data (the
demo dictionary, entity list, templates, corpus, and scripted backend), so
a config can run the desk-scale pipeline with no external files at all.
Unknown keys are rejected rather than ignored; a typo should fail loudly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from .backend import Backend, HttpBackend, HttpBackendConfig, ScriptedBackend
from .correction import ModeDirective, ResponseGrammar
from .errors import ConfigError
from .phonetics import Granularity, PinyinDictionary
from .repository import (
    EntityRepository,
    RepositoryConfig,
    build_repository,
    load_entity_file,
)

BUILTIN_PREFIX = "builtin:"
AUTH_TOKEN_ENV = "ENTCORR_BACKEND_TOKEN"


def resolve_path(value: str, base_dir: Path) -> Path:
    """Resolve a config path: builtin data, absolute, or config-relative."""
    if value.startswith(BUILTIN_PREFIX):
        name = value[len(BUILTIN_PREFIX):]
        candidate = Path(str(resources.files("entcorr.data").joinpath(name)))
    else:
        candidate = Path(value)
        if not candidate.is_absolute():
            candidate = base_dir / candidate
    if not candidate.exists():
        raise ConfigError(f"configured file does not exist: {value}")
    return candidate


@dataclass(frozen=True)
class PathsConfig:
    pinyin_dict: str = "builtin:pinyin_dict.tsv"
    entities: str = "builtin:entities_demo.tsv"
    templates: str = "builtin:templates.txt"
    dataset: str | None = None
    backend_fixture: str | None = "builtin:desk_backend.json"


@dataclass(frozen=True)
class PhoneticsConfig:
    granularity: str = "phoneme"  # "phoneme" | "syllable"
    with_tones: bool = False

    def granularity_enum(self) -> Granularity:
        try:
            return Granularity(self.granularity)
        except ValueError:
            raise ConfigError(
                f"granularity must be 'phoneme' or 'syllable', "
                f"got {self.granularity!r}") from None


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 3
    type_filter: str | None = None


@dataclass(frozen=True)
class TaggerConfig:
    threshold: float = 0.9
    max_len: int | None = None


@dataclass(frozen=True)
class RlmConfig:
    mask_fraction: float = 0.3


@dataclass(frozen=True)
class SelfTrainConfig:
    hint_attempts: int = 4
    balance: bool = True
    beta: float = 0.1


@dataclass(frozen=True)
class BackendSection:
    kind: str = "scripted"  # "scripted" | "http"
    url: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    append_mode_suffix: bool = False


@dataclass(frozen=True)
class CorrectionSection:
    mode: str = "auto"  # "auto" | "think" | "nothink"
    temperature: float = 0.0
    max_tokens: int = 512

    def mode_directive(self) -> ModeDirective:
        try:
            return ModeDirective(self.mode)
        except ValueError:
            raise ConfigError(
                f"correction mode must be auto, think or nothink, "
                f"got {self.mode!r}") from None


@dataclass(frozen=True)
class GrammarSection:
    think_open: str = "<think>"
    think_close: str = "</think>"
    answer_open: str = "<answer>"
    answer_close: str = "</answer>"

    def to_grammar(self) -> ResponseGrammar:
        return ResponseGrammar(self.think_open, self.think_close,
                               self.answer_open, self.answer_close)


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    phonetics: PhoneticsConfig = field(default_factory=PhoneticsConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    rlm: RlmConfig = field(default_factory=RlmConfig)
    selftrain: SelfTrainConfig = field(default_factory=SelfTrainConfig)
    backend: BackendSection = field(default_factory=BackendSection)
    correction: CorrectionSection = field(default_factory=CorrectionSection)
    grammar: GrammarSection = field(default_factory=GrammarSection)
    seed: int = 0
    jobs: int = 1
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if self.retrieval.k < 1:
            raise ConfigError(f"retrieval.k must be >= 1, got {self.retrieval.k}")
        if not 0.0 <= self.rlm.mask_fraction <= 1.0:
            raise ConfigError(
                f"rlm.mask_fraction must be in [0, 1], got {self.rlm.mask_fraction}")
        if not 0.0 < self.tagger.threshold <= 1.0:
            raise ConfigError(
                f"tagger.threshold must be in (0, 1], got {self.tagger.threshold}")
        if self.selftrain.hint_attempts < 1:
            raise ConfigError("selftrain.hint_attempts must be >= 1")
        if self.selftrain.beta <= 0:
            raise ConfigError("selftrain.beta must be positive")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.backend.kind not in ("scripted", "http"):
            raise ConfigError(
                f"backend.kind must be 'scripted' or 'http', got {self.backend.kind!r}")
        if self.backend.kind == "http" and not self.backend.url:
            raise ConfigError("backend.kind http requires backend.url")
        if self.backend.kind == "scripted" and not self.paths.backend_fixture:
            raise ConfigError(
                "backend.kind scripted requires paths.backend_fixture")

    # resolved paths

    def pinyin_dict_path(self) -> Path:
        return resolve_path(self.paths.pinyin_dict, self.base_dir)

    def entities_path(self) -> Path:
        return resolve_path(self.paths.entities, self.base_dir)

    def templates_path(self) -> Path:
        return resolve_path(self.paths.templates, self.base_dir)

    def dataset_path(self) -> Path:
        if self.paths.dataset is None:
            raise ConfigError("no dataset configured (paths.dataset or --dataset)")
        return resolve_path(self.paths.dataset, self.base_dir)

    def backend_fixture_path(self) -> Path:
        if self.paths.backend_fixture is None:
            raise ConfigError("no scripted backend fixture configured")
        return resolve_path(self.paths.backend_fixture, self.base_dir)

    # constructed components

    def load_dictionary(self) -> PinyinDictionary:
        return PinyinDictionary.from_tsv(self.pinyin_dict_path())

    def load_repository(self, dictionary: PinyinDictionary | None = None) -> EntityRepository:
        dictionary = dictionary or self.load_dictionary()
        repo_config = RepositoryConfig(
            dictionary=dictionary,
            granularity=self.phonetics.granularity_enum(),
            with_tones=self.phonetics.with_tones,
        )
        return build_repository(load_entity_file(self.entities_path()), repo_config)

    def make_backend(self) -> Backend:
        if self.backend.kind == "scripted":
            return ScriptedBackend.from_json_file(self.backend_fixture_path())
        return HttpBackend(HttpBackendConfig(
            url=self.backend.url,
            auth_token=os.environ.get(AUTH_TOKEN_ENV) or None,
            timeout=self.backend.timeout,
            max_retries=self.backend.max_retries,
            append_mode_suffix=self.backend.append_mode_suffix,
        ))


def _build_section(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


_SECTIONS = {
    "paths": PathsConfig,
    "phonetics": PhoneticsConfig,
    "retrieval": RetrievalConfig,
    "tagger": TaggerConfig,
    "rlm": RlmConfig,
    "selftrain": SelfTrainConfig,
    "backend": BackendSection,
    "correction": CorrectionSection,
    "grammar": GrammarSection,
}


def config_from_dict(data: dict, base_dir: Path) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    kwargs = {}
    scalars = {"seed": int, "jobs": int}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be a mapping")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key in scalars:
            try:
                kwargs[key] = scalars[key](value)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r} must be an integer") from None
        else:
            raise ConfigError(f"unknown top-level config key {key!r}")
    return PipelineConfig(base_dir=base_dir, **kwargs)


def load_config(path: str | Path) -> tuple[PipelineConfig, bytes]:
    """Load a YAML config; returns the config and the raw bytes for hashing."""
    if isinstance(path, str) and path.startswith(BUILTIN_PREFIX):
        name = path[len(BUILTIN_PREFIX):]
        resolved = Path(str(resources.files("entcorr.data").joinpath(name)))
    else:
        resolved = Path(path)
    try:
        raw = resolved.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw.decode("utf-8")) or {}
    except (yaml.YAMLError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data, resolved.parent.resolve()), raw


def default_config() -> PipelineConfig:
    return PipelineConfig()
