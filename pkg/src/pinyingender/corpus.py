"""Labeled name records: ingestion, vocabularies, splits, statistics.

The record CSV format is ``pinyin,hanzi,gender[,source]`` where gender
is 0 (male) or 1 (female) and the hanzi column may be empty.  Bad rows
are reported, never silently dropped.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .lexicon import Segmentation, SyllableLexicon, canonical_segment

MALE, FEMALE = 0, 1

AGG_TOKEN = "[AGG]"
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
SPECIALS = (AGG_TOKEN, PAD_TOKEN, UNK_TOKEN)
AGG_ID, PAD_ID, UNK_ID = 0, 1, 2

MAX_HANZI_CHARS = 3

_PINYIN_RE = re.compile(r"[a-z]+\Z")


class CorpusFormatError(ValueError):
    """The records file is structurally unusable (bad header etc.)."""


@dataclass(frozen=True)
class NameRecord:
    """One labeled given name."""

    pinyin_given: str
    hanzi_given: Optional[tuple[str, ...]]
    gender: int
    source_id: Optional[int] = None

    def __post_init__(self):
        if not self.pinyin_given or not _PINYIN_RE.match(self.pinyin_given):
            raise ValueError(f"pinyin must be lowercase letters: {self.pinyin_given!r}")
        if self.gender not in (MALE, FEMALE):
            raise ValueError(f"gender must be 0 or 1, got {self.gender!r}")
        if self.hanzi_given is not None:
            if not 1 <= len(self.hanzi_given) <= MAX_HANZI_CHARS:
                raise ValueError(
                    f"hanzi name must have 1..{MAX_HANZI_CHARS} characters"
                )


@dataclass(frozen=True)
class RejectedRow:
    row: int
    reason: str


@dataclass
class IngestResult:
    records: list[NameRecord]
    rejects: list[RejectedRow]


def _parse_row(number: int, row: dict) -> NameRecord:
    pinyin = (row.get("pinyin") or "").strip().lower()
    if not pinyin:
        raise ValueError("empty pinyin")
    if not _PINYIN_RE.match(pinyin):
        raise ValueError(f"pinyin contains non-letters: {pinyin!r}")
    hanzi_text = (row.get("hanzi") or "").strip()
    hanzi = tuple(hanzi_text) if hanzi_text else None
    if hanzi is not None and len(hanzi) > MAX_HANZI_CHARS:
        raise ValueError(f"hanzi length {len(hanzi)} > {MAX_HANZI_CHARS}")
    gender_text = (row.get("gender") or "").strip()
    if gender_text not in ("0", "1"):
        raise ValueError(f"gender must be 0 or 1, got {gender_text!r}")
    source_text = (row.get("source") or "").strip()
    source_id = int(source_text) if source_text else None
    return NameRecord(pinyin, hanzi, int(gender_text), source_id)


def _open_reader(path):
    fh = open(path, "r", encoding="utf-8", newline="")
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        fh.close()
        raise CorpusFormatError(f"{path}: empty file, expected a CSV header")
    missing = {"pinyin", "gender"} - set(reader.fieldnames)
    if missing:
        fh.close()
        raise CorpusFormatError(f"{path}: missing required columns {sorted(missing)}")
    return fh, reader


def read_records(path) -> IngestResult:
    """Read and validate a records CSV; invalid rows land in ``rejects``."""
    records: list[NameRecord] = []
    rejects: list[RejectedRow] = []
    fh, reader = _open_reader(path)
    with fh:
        for number, row in enumerate(reader, start=2):
            try:
                records.append(_parse_row(number, row))
            except ValueError as exc:
                rejects.append(RejectedRow(number, str(exc)))
    return IngestResult(records, rejects)


def stream_records(path) -> Iterator[NameRecord]:
    """Yield valid records one at a time; invalid rows are skipped.

    Meant for statistics over files too large to hold in memory; use
    :func:`read_records` when the rejects report matters.
    """
    fh, reader = _open_reader(path)
    with fh:
        for row in reader:
            try:
                yield _parse_row(0, row)
            except ValueError:
                continue


def write_records(path, records: Iterable[NameRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pinyin", "hanzi", "gender", "source"])
        for rec in records:
            writer.writerow([
                rec.pinyin_given,
                "".join(rec.hanzi_given) if rec.hanzi_given else "",
                rec.gender,
                rec.source_id if rec.source_id is not None else "",
            ])


def write_rejects(path, rejects: Iterable[RejectedRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "reason"])
        for rej in rejects:
            writer.writerow([rej.row, rej.reason])


def segment_record(record: NameRecord, lex: SyllableLexicon) -> Optional[Segmentation]:
    """Canonical segmentation, pinned to the hanzi length when present."""
    expected = len(record.hanzi_given) if record.hanzi_given is not None else None
    return canonical_segment(record.pinyin_given, lex, expected_count=expected)


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

class Vocab:
    """Token list with AGG/PAD/UNK pinned at positions 0, 1, 2.

    Data tokens are ordered by descending frequency, ties broken
    lexicographically, so two builds over the same corpus agree.
    """

    def __init__(self, data_tokens: Sequence[str]):
        for special in SPECIALS:
            if special in data_tokens:
                raise ValueError(f"data token collides with special {special!r}")
        self.tokens: list[str] = list(SPECIALS) + list(data_tokens)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.tokens[idx]


def _record_tokens(record: NameRecord, mode: str, lex: Optional[SyllableLexicon]):
    if mode == "syllable":
        seg = segment_record(record, lex)
        return list(seg.parts) if seg is not None else None
    if mode == "letter":
        return list(record.pinyin_given)
    if mode == "hanzi_char":
        return list(record.hanzi_given) if record.hanzi_given is not None else None
    raise ValueError(f"unknown vocab mode {mode!r}")


def build_vocab(
    records: Sequence[NameRecord],
    mode: str,
    min_count: int = 1,
    lex: Optional[SyllableLexicon] = None,
) -> Vocab:
    """Frequency-ordered vocabulary over one token view of the records.

    ``mode`` is ``syllable`` (needs ``lex``), ``letter``, or
    ``hanzi_char``.  Tokens seen fewer than ``min_count`` times map to
    UNK.  Records that cannot produce tokens in the requested mode
    (unsegmentable, or no hanzi) contribute nothing.
    """
    if not records:
        raise ValueError("cannot build a vocabulary from zero records")
    if mode == "syllable" and lex is None:
        raise ValueError("syllable mode requires a lexicon")
    counts: Counter[str] = Counter()
    for record in records:
        tokens = _record_tokens(record, mode, lex)
        if tokens:
            counts.update(tokens)
    if not counts:
        raise ValueError(f"no {mode} tokens found in the given records")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass
class DatasetSplit:
    train: list[NameRecord]
    validation: list[NameRecord]
    test: list[NameRecord]


def _apportion(total: int, ratios: Sequence[float]) -> list[int]:
    # largest-remainder method: sizes sum to total, each within 1 of exact share
    weight = sum(ratios)
    exact = [total * r / weight for r in ratios]
    sizes = [int(e) for e in exact]
    shortfall = total - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (exact[i] - sizes[i], -i), reverse=True)
    for i in order[:shortfall]:
        sizes[i] += 1
    return sizes


def split_dataset(
    records: Sequence[NameRecord],
    ratios: tuple[float, float, float] = (8, 1, 1),
    seed: int = 0,
) -> DatasetSplit:
    """Seeded shuffle followed by a train/validation/test partition."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if len(records) < 10:
        raise ValueError("need at least 10 records to split")
    order = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    n_train, n_val, n_test = _apportion(len(records), ratios)
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
    )


def kfold_split(records: Sequence[NameRecord], k: int = 5, seed: int = 0) -> list[list[NameRecord]]:
    """Seeded disjoint folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(records):
        raise ValueError(f"k={k} exceeds the {len(records)} available records")
    order = np.random.default_rng(seed).permutation(len(records))
    folds: list[list[NameRecord]] = [[] for _ in range(k)]
    for position, idx in enumerate(order):
        folds[position % k].append(records[idx])
    return folds


# ---------------------------------------------------------------------------
# Streaming statistics
# ---------------------------------------------------------------------------

@dataclass
class NameStatistics:
    """Count stores keyed by syllable sequences and single syllables.

    Memory grows with the number of distinct keys, not with the number
    of rows, and two shards merge into the same statistics the
    concatenated stream would produce.
    """

    pinyin_name_gender_counts: dict[tuple[str, ...], list[int]] = field(default_factory=dict)
    pinyin_to_hanzi_counts: dict[tuple[str, ...], Counter] = field(default_factory=dict)
    syllable_to_char_counts: dict[str, Counter] = field(default_factory=dict)
    rows_counted: int = 0
    rows_skipped: int = 0

    def merge(self, other: "NameStatistics") -> "NameStatistics":
        merged = NameStatistics()
        for stats in (self, other):
            for key, mf in stats.pinyin_name_gender_counts.items():
                slot = merged.pinyin_name_gender_counts.setdefault(key, [0, 0])
                slot[0] += mf[0]
                slot[1] += mf[1]
            for key, counter in stats.pinyin_to_hanzi_counts.items():
                merged.pinyin_to_hanzi_counts.setdefault(key, Counter()).update(counter)
            for key, counter in stats.syllable_to_char_counts.items():
                merged.syllable_to_char_counts.setdefault(key, Counter()).update(counter)
        merged.rows_counted = self.rows_counted + other.rows_counted
        merged.rows_skipped = self.rows_skipped + other.rows_skipped
        return merged

    def key_store_sizes(self) -> dict[str, int]:
        return {
            "pinyin_name_gender_counts": len(self.pinyin_name_gender_counts),
            "pinyin_to_hanzi_counts": len(self.pinyin_to_hanzi_counts),
            "syllable_to_char_counts": len(self.syllable_to_char_counts),
        }


def build_statistics(records: Iterable[NameRecord], lex: SyllableLexicon) -> NameStatistics:
    """Single streaming pass over ``records``.

    Results are independent of input order.  Records whose pinyin does
    not segment (given the hanzi length when present) are counted as
    skipped.  Segmentations are memoized per distinct (pinyin, length)
    pair, so the cache is also bounded by the number of distinct names.
    """
    stats = NameStatistics()
    seg_cache: dict[tuple[str, Optional[int]], Optional[tuple[str, ...]]] = {}
    for record in records:
        expected = len(record.hanzi_given) if record.hanzi_given is not None else None
        cache_key = (record.pinyin_given, expected)
        if cache_key in seg_cache:
            parts = seg_cache[cache_key]
        else:
            seg = canonical_segment(record.pinyin_given, lex, expected_count=expected)
            parts = seg.parts if seg is not None else None
            seg_cache[cache_key] = parts
        if parts is None:
            stats.rows_skipped += 1
            continue
        slot = stats.pinyin_name_gender_counts.setdefault(parts, [0, 0])
        slot[record.gender] += 1
        if record.hanzi_given is not None:
            hanzi_name = "".join(record.hanzi_given)
            stats.pinyin_to_hanzi_counts.setdefault(parts, Counter())[hanzi_name] += 1
            for syllable, char in zip(parts, record.hanzi_given):
                stats.syllable_to_char_counts.setdefault(syllable, Counter())[char] += 1
        stats.rows_counted += 1
    return stats


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticChar:
    char: str
    syllable: str
    female_prob: float


@dataclass
class SyntheticSpec:
    """Generator description: a gendered character universe.

    Several characters may share one syllable, which is exactly the
    ambiguity that makes romanized names hard: the syllable string no
    longer determines the characters, but the characters still carry
    the gender signal.
    """

    chars: list[SyntheticChar]
    length_dist: dict[int, float]
    count: int

    def __post_init__(self):
        if not self.chars:
            raise ValueError("synthetic spec needs a non-empty character set")
        if self.count < 0:
            raise ValueError("count must be non-negative")
        for sc in self.chars:
            if not 0.0 <= sc.female_prob <= 1.0:
                raise ValueError(f"female_prob out of range for {sc.char!r}")
            if not _PINYIN_RE.match(sc.syllable):
                raise ValueError(f"syllable must be lowercase letters: {sc.syllable!r}")
        if not self.length_dist:
            raise ValueError("length distribution must be non-empty")
        for length, weight in self.length_dist.items():
            if length not in (1, 2, 3) or weight < 0:
                raise ValueError("length distribution is over {1,2,3} with weights >= 0")
        if sum(self.length_dist.values()) <= 0:
            raise ValueError("length distribution weights sum to zero")


def default_synthetic_spec(count: int = 5000) -> SyntheticSpec:
    """A compact ambiguous universe for demos and experiments.

    24 characters share 12 syllables pairwise; each syllable has one
    female-leaning and one male-leaning character with varying
    strength, so pinyin alone carries partial gender signal and the
    characters carry most of it.
    """
    syllables = ["yan", "jia", "wei", "min", "ling", "hao",
                 "xin", "yu", "chen", "qing", "bo", "shan"]
    # female-leaning then male-leaning character per syllable; Unicode
    # private-ish CJK picks are arbitrary stand-ins, probabilities matter
    chars = "妍炎佳家薇伟敏民玲凌好浩昕鑫瑜宇晨辰晴清波博珊山"
    female_probs = [0.95, 0.20, 0.90, 0.30, 0.92, 0.08,
                    0.85, 0.25, 0.93, 0.15, 0.88, 0.10,
                    0.90, 0.22, 0.87, 0.12, 0.60, 0.35,
                    0.94, 0.40, 0.18, 0.45, 0.91, 0.05]
    table = []
    for i, ch in enumerate(chars):
        table.append(SyntheticChar(ch, syllables[i // 2], female_probs[i]))
    return SyntheticSpec(chars=table, length_dist={1: 0.15, 2: 0.7, 3: 0.15}, count=count)


def overfit_synthetic_spec(count: int = 50) -> SyntheticSpec:
    """Gender-pure variant for optimizer sanity checks.

    Characters sharing a syllable also share a deterministic gender
    (female probability 0 or 1), so single-syllable names never carry
    conflicting labels and a small draw is memorizable end to end.
    """
    female_syllables = ["yan", "jia", "ling", "xin", "qing", "shan"]
    male_syllables = ["wei", "min", "hao", "yu", "chen", "bo"]
    female_chars = "妍嫣佳珈玲翎欣昕晴箐珊姗"
    male_chars = "伟卫民旻浩皓宇禹晨辰波博"
    table = []
    for i, syllable in enumerate(female_syllables):
        table.append(SyntheticChar(female_chars[2 * i], syllable, 1.0))
        table.append(SyntheticChar(female_chars[2 * i + 1], syllable, 1.0))
    for i, syllable in enumerate(male_syllables):
        table.append(SyntheticChar(male_chars[2 * i], syllable, 0.0))
        table.append(SyntheticChar(male_chars[2 * i + 1], syllable, 0.0))
    return SyntheticSpec(chars=table, length_dist={1: 0.2, 2: 0.6, 3: 0.2}, count=count)


def tiny_synthetic_spec(count: int = 16) -> SyntheticSpec:
    """Four unambiguous characters, mostly single-syllable names.

    Small enough that total losses stay a few nats, which keeps
    finite-difference verification far from float64 cancellation noise.
    """
    table = [
        SyntheticChar("妍", "yan", 1.0),
        SyntheticChar("伟", "wei", 0.0),
        SyntheticChar("玲", "ling", 1.0),
        SyntheticChar("浩", "hao", 0.0),
    ]
    return SyntheticSpec(chars=table, length_dist={1: 0.6, 2: 0.4}, count=count)


def iter_synthetic(spec: SyntheticSpec, seed: int = 0, chunk: int = 65536) -> Iterator[NameRecord]:
    """Stream records drawn from ``spec`` deterministically per seed."""
    rng = np.random.default_rng(seed)
    lengths = sorted(spec.length_dist)
    weights = np.array([spec.length_dist[k] for k in lengths], dtype=np.float64)
    weights /= weights.sum()
    probs = np.array([sc.female_prob for sc in spec.chars])
    remaining = spec.count
    while remaining > 0:
        n = min(chunk, remaining)
        remaining -= n
        length_draw = rng.choice(np.array(lengths), size=n, p=weights)
        char_draw = rng.integers(0, len(spec.chars), size=(n, max(lengths)))
        uniform = rng.random(n)
        for i in range(n):
            k = int(length_draw[i])
            idx = char_draw[i, :k]
            female_p = float(probs[idx].mean())
            gender = FEMALE if uniform[i] < female_p else MALE
            picked = [spec.chars[j] for j in idx]
            yield NameRecord(
                pinyin_given="".join(sc.syllable for sc in picked),
                hanzi_given=tuple(sc.char for sc in picked),
                gender=gender,
            )


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> list[NameRecord]:
    return list(iter_synthetic(spec, seed))
