"""Mandarin romanization and phonetic edit-distance similarity.

Text is romanized one character at a time against a numeric-tone pinyin
dictionary; pronunciations are then compared by Levenshtein distance over a
token stream emitted at either syllable or initial/final (phoneme)
granularity.  Similarity is the distance normalized by the longer stream,
flipped so that 1.0 means identical pronunciation.

Tones are excluded from the token stream by default: ASR homophone
confusions routinely cross tones, and whole-tone matching would hide exactly
the pairs this module exists to score.  Both the granularity and the tone
flag are configurable per sequence.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import (
    BothEmptyError,
    DictionaryError,
    GranularityMismatchError,
    UnknownCharacterError,
)

# Pinyin initials, two-letter ones first so prefix matching is unambiguous.
# Orthographic y/w count as initials: "wo" parses as w+o, "yu" as y+u.
_INITIALS = (
    "zh", "ch", "sh",
    "b", "p", "m", "f", "d", "t", "n", "l",
    "g", "k", "h", "j", "q", "x", "r", "z", "c", "s", "y", "w",
)

_CJK_RANGES = (
    (0x3400, 0x4DBF),    # CJK extension A
    (0x4E00, 0x9FFF),    # CJK unified ideographs
    (0xF900, 0xFAFF),    # compatibility ideographs
    (0x20000, 0x2EBEF),  # extensions B..F
)

VALID_TONES = (0, 1, 2, 3, 4, 5)  # 0 = unknown, 5 = neutral


def is_cjk(char: str) -> bool:
    code = ord(char)
    return any(lo <= code <= hi for lo, hi in _CJK_RANGES)


class Granularity(Enum):
    """How a syllable is emitted into the distance token stream."""

    SYLLABLE = "syllable"
    PHONEME = "phoneme"


@dataclass(frozen=True)
class PinyinSyllable:
    """One syllable: optional initial, non-empty final, tone in 0..5."""

    initial: str | None
    final: str
    tone: int

    def __post_init__(self):
        if not self.final:
            raise ValueError("syllable final must be non-empty")
        if self.tone not in VALID_TONES:
            raise ValueError(f"tone must be one of {VALID_TONES}, got {self.tone}")

    @classmethod
    def parse(cls, reading: str) -> "PinyinSyllable":
        """Parse a numeric-tone reading such as ``shang4``, ``e2`` or ``lv3``."""
        reading = reading.strip()
        if not reading:
            raise ValueError("empty pinyin reading")
        if reading[-1].isdigit():
            tone = int(reading[-1])
            body = reading[:-1]
        else:
            tone = 0
            body = reading
        body = body.lower()
        initial = None
        for cand in _INITIALS:
            if body.startswith(cand):
                initial = cand
                break
        final = body[len(initial):] if initial else body
        if not final:
            raise ValueError(f"reading {reading!r} has no final")
        return cls(initial=initial, final=final, tone=tone)

    def spelled(self) -> str:
        """Toneless spelling, initial and final joined."""
        return (self.initial or "") + self.final


@dataclass(frozen=True)
class PhoneticSequence:
    """The pronunciation of a string as an ordered run of syllables.

    ``tokens()`` is the stream all distance computations operate on: one
    token per syllable under SYLLABLE granularity, ``[initial?, final]`` per
    syllable under PHONEME granularity.  When ``with_tones`` is set the tone
    digit is appended to the final (and to the syllable token).
    """

    syllables: tuple[PinyinSyllable, ...]
    granularity: Granularity = Granularity.PHONEME
    with_tones: bool = False

    def tokens(self) -> tuple[str, ...]:
        out: list[str] = []
        for syl in self.syllables:
            tone = str(syl.tone) if self.with_tones else ""
            if self.granularity is Granularity.SYLLABLE:
                out.append(syl.spelled() + tone)
            else:
                if syl.initial:
                    out.append(syl.initial)
                out.append(syl.final + tone)
        return tuple(out)

    def __len__(self) -> int:
        """Token-stream length (not syllable count)."""
        return len(self.tokens())


class PinyinDictionary:
    """Character -> ordered readings; the first reading is the default.

    Lookups are deterministic by construction: polyphone characters always
    resolve to their first listed reading.
    """

    def __init__(self, readings: dict[str, tuple[PinyinSyllable, ...]]):
        for char, entry in readings.items():
            if not entry:
                raise DictionaryError(f"character {char!r} has an empty reading list")
        self._readings = dict(readings)

    def __contains__(self, char: str) -> bool:
        return char in self._readings

    def __len__(self) -> int:
        return len(self._readings)

    def characters(self) -> tuple[str, ...]:
        return tuple(self._readings)

    def readings(self, char: str) -> tuple[PinyinSyllable, ...]:
        return self._readings[char]

    def default_reading(self, char: str) -> PinyinSyllable:
        return self._readings[char][0]

    @classmethod
    def from_tsv(cls, path: str | Path) -> "PinyinDictionary":
        """Load a UTF-8 TSV file: ``<char>\\t<reading1> <reading2> ...``.

        Lines starting with ``#`` and blank lines are ignored.
        """
        path = Path(path)
        readings: dict[str, tuple[PinyinSyllable, ...]] = {}
        with path.open(encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DictionaryError(f"{path}:{lineno}: expected '<char>\\t<readings>'")
                char = unicodedata.normalize("NFC", parts[0].strip())
                if len(char) != 1:
                    raise DictionaryError(f"{path}:{lineno}: key must be a single character")
                tokens = parts[1].split()
                if not tokens:
                    raise DictionaryError(f"{path}:{lineno}: no readings for {char!r}")
                try:
                    parsed = tuple(PinyinSyllable.parse(tok) for tok in tokens)
                except ValueError as exc:
                    raise DictionaryError(f"{path}:{lineno}: {exc}") from exc
                readings[char] = parsed
        return cls(readings)


def romanize(
    text: str,
    dictionary: PinyinDictionary,
    granularity: Granularity = Granularity.PHONEME,
    with_tones: bool = False,
) -> PhoneticSequence:
    """Romanize ``text`` one character at a time.

    CJK characters take their default dictionary reading; any other character
    becomes a single toneless syllable whose final is the lowercased
    character itself, so mixed Latin/digit text stays alignable.

    Raises UnknownCharacterError for a CJK character absent from the
    dictionary.
    """
    text = unicodedata.normalize("NFC", text)
    syllables: list[PinyinSyllable] = []
    for pos, char in enumerate(text):
        if is_cjk(char):
            if char not in dictionary:
                raise UnknownCharacterError(char, pos)
            syllables.append(dictionary.default_reading(char))
        else:
            syllables.append(PinyinSyllable(initial=None, final=char.lower(), tone=0))
    return PhoneticSequence(tuple(syllables), granularity=granularity, with_tones=with_tones)


def _check_compatible(a: PhoneticSequence, b: PhoneticSequence) -> None:
    if a.granularity is not b.granularity or a.with_tones != b.with_tones:
        raise GranularityMismatchError(
            f"cannot compare {a.granularity.value}/tones={a.with_tones} "
            f"with {b.granularity.value}/tones={b.with_tones}"
        )


def token_edit_distance(a: tuple[str, ...] | list[str], b: tuple[str, ...] | list[str]) -> int:
    """Unit-cost Levenshtein distance between two token streams."""
    if len(a) < len(b):
        a, b = b, a
    # two-row DP; b is the shorter side
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        cur = [i]
        for j, tok_b in enumerate(b, start=1):
            if tok_a == tok_b:
                cur.append(prev[j - 1])
            else:
                cur.append(1 + min(prev[j - 1], prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def edit_distance(a: PhoneticSequence, b: PhoneticSequence) -> int:
    """Levenshtein distance over the emitted token streams."""
    _check_compatible(a, b)
    return token_edit_distance(a.tokens(), b.tokens())


def similarity(a: PhoneticSequence, b: PhoneticSequence) -> float:
    """Normalized phonetic similarity in [0, 1].

    1 - distance / max(stream lengths); 1.0 iff the streams are equal, 0.0
    when the distance reaches the longer stream's length.
    """
    _check_compatible(a, b)
    ta, tb = a.tokens(), b.tokens()
    longest = max(len(ta), len(tb))
    if longest == 0:
        raise BothEmptyError("similarity is undefined for two empty sequences")
    return 1.0 - token_edit_distance(ta, tb) / longest
