"""Mandarin syllable inventory and pinyin segmentation.

A romanized given name arrives as one undelimited letter string
("jianguo").  Splitting it into valid syllables recovers the positions
that correspond to individual Chinese characters, so every downstream
model works on syllable sequences instead of raw letters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional

_LETTERS = re.compile(r"[a-z]+\Z")

#: Hard bound on enumerated segmentations for a single input.
SEGMENTATION_CAP = 1024

#: Longest letter count a single syllable entry may have.
MAX_SYLLABLE_LETTERS = 6


class LexiconFormatError(ValueError):
    """A lexicon line is not a plain letter token."""

    def __init__(self, line_number: int, content: str, reason: str):
        self.line_number = line_number
        self.content = content
        super().__init__(f"line {line_number}: {reason}: {content!r}")


class InvalidPinyinError(ValueError):
    """Segmentation input is empty or contains non-letter characters."""


class SegmentationLimitError(RuntimeError):
    """The input admits more segmentations than the enumeration cap."""


@dataclass(frozen=True)
class SyllableLexicon:
    """Immutable set of valid syllables plus the cached longest length."""

    syllables: frozenset[str]
    max_syllable_len: int

    def __post_init__(self):
        if not self.syllables:
            raise ValueError("lexicon must contain at least one syllable")
        longest = max(len(s) for s in self.syllables)
        if longest != self.max_syllable_len:
            raise ValueError(
                f"max_syllable_len={self.max_syllable_len} but longest entry has {longest}"
            )

    def __contains__(self, token: str) -> bool:
        return token in self.syllables

    def __len__(self) -> int:
        return len(self.syllables)

    @classmethod
    def from_syllables(cls, syllables: Iterable[str]) -> "SyllableLexicon":
        entries = frozenset(syllables)
        return cls(entries, max(len(s) for s in entries) if entries else 0)


@dataclass(frozen=True)
class Segmentation:
    """Ordered syllable split; joining the parts restores the input."""

    parts: tuple[str, ...]

    def __post_init__(self):
        if not self.parts:
            raise ValueError("segmentation must have at least one part")

    def __len__(self) -> int:
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    @property
    def text(self) -> str:
        return "".join(self.parts)


def load_lexicon(lines: Iterable[str]) -> SyllableLexicon:
    """Build a lexicon from line-oriented text.

    Blank lines and ``#`` comment lines are skipped, entries are
    lowercased and deduplicated.  A line with anything other than
    letters (or more than 6 of them) raises
    :class:`LexiconFormatError` carrying the offending line number.
    """
    entries: set[str] = set()
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        token = line.lower()
        if not _LETTERS.match(token):
            raise LexiconFormatError(number, raw.rstrip("\n"), "non-letter character")
        if len(token) > MAX_SYLLABLE_LETTERS:
            raise LexiconFormatError(
                number, raw.rstrip("\n"), f"longer than {MAX_SYLLABLE_LETTERS} letters"
            )
        entries.add(token)
    if not entries:
        raise ValueError("lexicon source contains no syllables")
    return SyllableLexicon.from_syllables(entries)


def load_lexicon_file(path) -> SyllableLexicon:
    with open(path, "r", encoding="utf-8") as fh:
        return load_lexicon(fh)


def bundled_lexicon() -> SyllableLexicon:
    """The packaged toneless Mandarin inventory (~410 syllables)."""
    text = resources.files("pinyingender.data").joinpath("syllables.txt").read_text("utf-8")
    return load_lexicon(text.splitlines())


def _check_input(name: str) -> None:
    if not isinstance(name, str) or not name:
        raise InvalidPinyinError("pinyin text must be a non-empty string")
    if not _LETTERS.match(name):
        raise InvalidPinyinError(f"pinyin text must be lowercase letters only: {name!r}")


def segment_all(name: str, lex: SyllableLexicon, cap: int = SEGMENTATION_CAP) -> list[Segmentation]:
    """Every split of ``name`` into lexicon syllables.

    Prefix dynamic programming: cell ``i`` holds all splits of the
    first ``i`` letters, extended by every lexicon entry that ends at
    ``i``.  Returns an empty list when no split exists.  Raises
    :class:`SegmentationLimitError` if any cell exceeds ``cap`` splits,
    which bounds pathological inputs such as long single-letter runs.
    """
    _check_input(name)
    n = len(name)
    max_len = min(lex.max_syllable_len, n)
    cells: list[list[tuple[str, ...]]] = [[] for _ in range(n + 1)]
    cells[0] = [()]
    for end in range(1, n + 1):
        bucket = cells[end]
        for start in range(max(0, end - max_len), end):
            if not cells[start]:
                continue
            token = name[start:end]
            if token in lex.syllables:
                for prefix in cells[start]:
                    bucket.append(prefix + (token,))
        if len(bucket) > cap:
            raise SegmentationLimitError(
                f"{name!r} exceeds {cap} segmentations at prefix length {end}"
            )
    return [Segmentation(parts) for parts in cells[n]]


def canonical_segment(
    name: str,
    lex: SyllableLexicon,
    expected_count: Optional[int] = None,
) -> Optional[Segmentation]:
    """Deterministic single split of ``name``, or ``None``.

    With ``expected_count`` the candidates are restricted to exactly
    that many syllables; otherwise the minimal syllable count wins.
    Remaining ties go to the lexicographically greatest vector of
    syllable lengths, i.e. the split whose early syllables are longest.
    """
    if expected_count is not None and expected_count < 1:
        raise ValueError("expected_count must be a positive integer")
    candidates = segment_all(name, lex)
    if expected_count is not None:
        candidates = [s for s in candidates if len(s) == expected_count]
    if not candidates:
        return None
    if expected_count is None:
        fewest = min(len(s) for s in candidates)
        candidates = [s for s in candidates if len(s) == fewest]
    return max(candidates, key=lambda s: tuple(len(p) for p in s.parts))
