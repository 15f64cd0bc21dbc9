"""Named-entity candidate repository and probability-ranked retrieval.

Every entity's pronunciation is precomputed at build time; a query span is
romanized once and scored against the whole repository, then similarities are
normalized into a distribution:

    P(entity | span) = phi(entity, span) / sum over the repository of phi

Retrieval is an exhaustive scan — correctness and reproducibility over
speed; the candidate sets this targets are tens of thousands of entries at
most.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import DatasetError, EmptyRepositoryError, UnknownCharacterError
from .phonetics import (
    Granularity,
    PhoneticSequence,
    PinyinDictionary,
    romanize,
    similarity,
)


class EntityType(Enum):
    PERSON = "PER"
    LOCATION = "LOC"
    ORGANIZATION = "ORG"
    UNKNOWN = "UNK"

    @classmethod
    def parse(cls, label: str) -> "EntityType":
        try:
            return cls(label.strip().upper())
        except ValueError:
            raise ValueError(f"unknown entity type {label!r}; expected PER, LOC or ORG") from None


@dataclass(frozen=True)
class Entity:
    surface: str
    type_label: EntityType
    phonetic: PhoneticSequence


@dataclass(frozen=True)
class RepositoryConfig:
    """Dictionary and emission settings shared by every entity in a repository."""

    dictionary: PinyinDictionary
    granularity: Granularity = Granularity.PHONEME
    with_tones: bool = False


@dataclass(frozen=True)
class RankedCandidate:
    entity: Entity
    probability: float
    similarity: float


@dataclass(frozen=True)
class RankedCandidates:
    """Top-k retrieval result for one query span, probabilities non-increasing."""

    query: str
    items: tuple[RankedCandidate, ...]

    def __len__(self) -> int:
        return len(self.items)

    def surfaces(self) -> tuple[str, ...]:
        return tuple(c.entity.surface for c in self.items)


class EntityRepository:
    """Deduplicated entity set with precomputed pronunciations.

    Immutable after build; iteration order is the build order with
    duplicates dropped.
    """

    def __init__(self, entities: tuple[Entity, ...], config: RepositoryConfig,
                 dropped_duplicates: int = 0):
        self.entities = entities
        self.config = config
        self.dropped_duplicates = dropped_duplicates

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def max_surface_length(self) -> int:
        return max(len(e.surface) for e in self.entities)

    def romanize(self, text: str) -> PhoneticSequence:
        return romanize(
            text,
            self.config.dictionary,
            granularity=self.config.granularity,
            with_tones=self.config.with_tones,
        )


def build_repository(
    records: Iterable[str | tuple[str, EntityType | None]],
    config: RepositoryConfig,
) -> EntityRepository:
    """Build a repository from (surface, type) records.

    Duplicate surfaces are dropped keeping the first occurrence; the dropped
    count is reported on the repository.  Raises UnknownCharacterError (with
    the offending entity attached) if a surface cannot be romanized, and
    EmptyRepositoryError if nothing valid remains.
    """
    entities: list[Entity] = []
    seen: set[str] = set()
    dropped = 0
    for record in records:
        if isinstance(record, str):
            surface, type_label = record, None
        else:
            surface, type_label = record
        surface = unicodedata.normalize("NFC", surface.strip())
        if not surface:
            raise ValueError("entity surface must be non-empty")
        if surface in seen:
            dropped += 1
            continue
        seen.add(surface)
        try:
            phonetic = romanize(
                surface,
                config.dictionary,
                granularity=config.granularity,
                with_tones=config.with_tones,
            )
        except UnknownCharacterError as exc:
            raise UnknownCharacterError(exc.char, exc.position, entity_surface=surface) from None
        entities.append(Entity(surface, type_label or EntityType.UNKNOWN, phonetic))
    if not entities:
        raise EmptyRepositoryError("no valid entities in the input")
    return EntityRepository(tuple(entities), config, dropped_duplicates=dropped)


def load_entity_file(path: str | Path) -> list[tuple[str, EntityType | None]]:
    """Read a UTF-8 entity list: ``<surface>`` or ``<surface>\\t<type>`` per line.

    Type is PER, LOC or ORG; ``#`` comments and blank lines are ignored.
    """
    path = Path(path)
    records: list[tuple[str, EntityType | None]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            surface = parts[0].strip()
            if not surface:
                raise DatasetError("empty entity surface", path=path, line=lineno)
            if len(parts) == 1:
                records.append((surface, None))
            elif len(parts) == 2:
                try:
                    records.append((surface, EntityType.parse(parts[1])))
                except ValueError as exc:
                    raise DatasetError(str(exc), path=path, line=lineno) from None
            else:
                raise DatasetError("expected '<surface>' or '<surface>\\t<type>'",
                                   path=path, line=lineno)
    return records


def candidate_probability(span: str, repo: EntityRepository) -> dict[Entity, float]:
    """Distribution over the repository for one detected span.

    Similarities are normalized to sum to 1; if every similarity is exactly
    zero the distribution falls back to uniform so retrieval still returns a
    full candidate list.
    """
    if len(repo) == 0:
        raise EmptyRepositoryError("cannot retrieve from an empty repository")
    span_ph = repo.romanize(unicodedata.normalize("NFC", span))
    phis = {entity: similarity(entity.phonetic, span_ph) for entity in repo}
    total = sum(phis.values())
    if total == 0.0:
        uniform = 1.0 / len(repo)
        return {entity: uniform for entity in repo}
    return {entity: phi / total for entity, phi in phis.items()}


def retrieve_top_k(
    span: str,
    repo: EntityRepository,
    k: int,
    type_filter: EntityType | None = None,
) -> RankedCandidates:
    """Top min(k, |repository|) candidates by probability.

    Ties break on shorter surface first, then lexicographic surface order,
    so identical inputs always rank identically.  ``type_filter`` restricts
    both the candidate set and the normalization to one entity type.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if type_filter is None:
        scope = repo
    else:
        filtered = tuple(e for e in repo if e.type_label is type_filter)
        if not filtered:
            raise EmptyRepositoryError(f"no entities of type {type_filter.value}")
        scope = EntityRepository(filtered, repo.config)
    probs = candidate_probability(span, scope)
    span_ph = scope.romanize(unicodedata.normalize("NFC", span))
    ranked = sorted(
        probs.items(),
        key=lambda item: (-item[1], len(item[0].surface), item[0].surface),
    )
    items = tuple(
        RankedCandidate(entity, prob, similarity(entity.phonetic, span_ph))
        for entity, prob in ranked[: min(k, len(scope))]
    )
    return RankedCandidates(query=span, items=items)
