"""Typed errors shared across the pipeline.

Every failure mode callers are expected to handle gets its own class so the
CLI can map them onto distinct exit codes.
"""

from __future__ import annotations


class EntcorrError(Exception):
    """Base class for all library errors."""


class ConfigError(EntcorrError):
    """Invalid or incomplete pipeline configuration."""


class DictionaryError(ConfigError):
    """Malformed pinyin dictionary file."""


class UnknownCharacterError(EntcorrError):
    """A CJK character has no dictionary reading."""

    def __init__(self, char: str, position: int, entity_surface: str | None = None):
        self.char = char
        self.position = position
        self.entity_surface = entity_surface
        where = f" in entity {entity_surface!r}" if entity_surface else ""
        super().__init__(
            f"no pinyin reading for character {char!r} at position {position}{where}"
        )


class GranularityMismatchError(EntcorrError):
    """Two phonetic sequences were emitted under incompatible settings."""


class BothEmptyError(EntcorrError):
    """Similarity is undefined when both token streams are empty."""


class EmptyRepositoryError(EntcorrError):
    """An entity repository ended up with zero entities."""


class LengthMismatchError(EntcorrError):
    """A tag sequence does not cover its text one tag per character."""


class EmptyInputError(EntcorrError):
    """An operation that needs non-empty text received an empty one."""


class MissingResponseError(EntcorrError):
    """A preference pair cannot be built because a probe response is absent."""

    def __init__(self, problem_id: str, mode: str):
        self.problem_id = problem_id
        self.mode = mode
        super().__init__(f"problem {problem_id!r} has no {mode} response")


class NonFiniteInputError(EntcorrError):
    """A loss/gradient input was NaN or infinite."""


class BackendError(EntcorrError):
    """Base class for model-backend failures."""


class BackendFailureError(BackendError):
    """The backend gave up after its configured retries."""


class BackendTimeoutError(BackendError):
    """The backend did not answer within the configured timeout."""


class ProtocolError(BackendError):
    """The inference service replied with something the client cannot parse."""


class MalformedResponseError(EntcorrError):
    """A model response carried no answer delimiters.

    ``partial`` holds the best-effort parse so the caller can still log the
    response and fall back to keeping the original span.
    """

    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)


class UnknownTemplateError(EntcorrError):
    """A prompt template id is not present in the template file."""


class SpanOutOfBoundsError(EntcorrError):
    """An entity span does not fit inside its utterance."""


class OverlappingSpansError(EntcorrError):
    """Entity spans overlap where disjoint spans are required."""


class EmptyReferenceError(EntcorrError):
    """CER is undefined for an empty reference string."""


class EmptyResultsError(EntcorrError):
    """Run statistics need at least one correction result."""


class DatasetError(EntcorrError):
    """A dataset file violates the JSONL schema.

    ``line`` is 1-based when the failure is tied to a specific line.
    """

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)
