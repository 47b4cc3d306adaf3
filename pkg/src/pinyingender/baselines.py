"""Non-neural reference predictors.

Four approaches of increasing machinery: raw per-name frequency
lookup, a syllable Naive Bayes, a consensus model over multiple
reporting sources with per-source competence, and conversion of the
romanized name to its most frequent character form scored by a
character-level gender model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

from .corpus import FEMALE, MALE, NameRecord, NameStatistics, segment_record
from .lexicon import SyllableLexicon

COMPETENCE_FLOOR = 0.01
COMPETENCE_CEIL = 0.99
COMPETENCE_INIT = 0.51


class UnknownSyllableError(KeyError):
    """A syllable appears in no statistic, so conversion has no target."""


def _as_key(name) -> str:
    if isinstance(name, str):
        return name
    return "".join(name)


# ---------------------------------------------------------------------------
# Frequency lookup
# ---------------------------------------------------------------------------

@dataclass
class FrequencyTable:
    counts: dict[str, list[int]] = field(default_factory=dict)

    def add(self, name: str, gender: int) -> None:
        self.counts.setdefault(name, [0, 0])[gender] += 1


def frequency_fit(records: Iterable[NameRecord]) -> FrequencyTable:
    table = FrequencyTable()
    for record in records:
        table.add(record.pinyin_given, record.gender)
    return table


def frequency_predict(table: FrequencyTable, name) -> tuple[str, Optional[float]]:
    """Majority label with its share; unseen names and exact ties abstain."""
    counts = table.counts.get(_as_key(name))
    if counts is None:
        return "unknown", None
    males, females = counts
    if males == females:
        return "unknown", None
    total = males + females
    if males > females:
        return "male", males / total
    return "female", females / total


# ---------------------------------------------------------------------------
# Naive Bayes over syllables
# ---------------------------------------------------------------------------

@dataclass
class NaiveBayesModel:
    prior_female: float
    syllable_counts: dict[str, list[int]]
    gender_totals: list[int]
    alpha: float
    vocab_size: int


def nb_fit(
    records: Sequence[NameRecord],
    lex: SyllableLexicon,
    alpha: float = 1.0,
) -> NaiveBayesModel:
    """Per-gender syllable occurrence counts with a Laplace constant.

    Records whose pinyin does not segment are not trainable and are
    skipped; fitting fails only if nothing trainable remains.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    syllable_counts: dict[str, list[int]] = {}
    gender_totals = [0, 0]
    label_counts = [0, 0]
    trainable = 0
    for record in records:
        seg = segment_record(record, lex)
        if seg is None:
            continue
        trainable += 1
        label_counts[record.gender] += 1
        for syllable in seg.parts:
            syllable_counts.setdefault(syllable, [0, 0])[record.gender] += 1
            gender_totals[record.gender] += 1
    if trainable == 0:
        raise ValueError("no trainable records: nothing segmented")
    return NaiveBayesModel(
        prior_female=label_counts[FEMALE] / trainable,
        syllable_counts=syllable_counts,
        gender_totals=gender_totals,
        alpha=alpha,
        vocab_size=len(syllable_counts),
    )


def nb_log_posteriors(model: NaiveBayesModel, syllables: Sequence[str]) -> tuple[float, float]:
    """Unnormalized log posterior per gender, smoothed.

    Log space throughout: products of many per-syllable likelihoods
    underflow fast otherwise.  A degenerate prior (all one gender)
    forces that gender deterministically.
    """
    log_post = [0.0, 0.0]
    priors = (1.0 - model.prior_female, model.prior_female)
    for gender in (MALE, FEMALE):
        if priors[gender] == 0.0:
            log_post[gender] = -math.inf
            continue
        log_post[gender] = math.log(priors[gender])
        denominator = model.gender_totals[gender] + model.alpha * model.vocab_size
        for syllable in syllables:
            count = model.syllable_counts.get(syllable, (0, 0))[gender]
            log_post[gender] += math.log(count + model.alpha) - math.log(denominator)
    return log_post[MALE], log_post[FEMALE]


def nb_predict(model: NaiveBayesModel, syllables: Sequence[str]) -> tuple[int, float]:
    """Label and posterior P(female); ties resolve to male."""
    log_m, log_f = nb_log_posteriors(model, syllables)
    if log_f == -math.inf and log_m == -math.inf:
        posterior_female = 0.5
    elif log_f == -math.inf:
        posterior_female = 0.0
    elif log_m == -math.inf:
        posterior_female = 1.0
    else:
        # 1 / (1 + exp(log_m - log_f)), guarded against overflow
        delta = log_m - log_f
        if delta > 0:
            posterior_female = math.exp(-delta) / (1.0 + math.exp(-delta))
        else:
            posterior_female = 1.0 / (1.0 + math.exp(delta))
    label = FEMALE if posterior_female > 0.5 else MALE
    return label, posterior_female


# ---------------------------------------------------------------------------
# Source-consensus model
# ---------------------------------------------------------------------------

@dataclass
class CCTModel:
    competences: dict[int, float]
    consensus: dict[str, tuple[int, float]]
    na_policy: int
    iterations: int


def _weighted_consensus(
    reports_by_name: dict[str, list[tuple[int, int]]],
    weights: dict[int, float],
    na_policy: int,
) -> dict[str, tuple[int, float]]:
    consensus: dict[str, tuple[int, float]] = {}
    for name, votes in reports_by_name.items():
        score = 0.0
        total_weight = 0.0
        for source, label in votes:
            w = weights[source]
            score += w if label == FEMALE else -w
            total_weight += abs(w)
        if score > 0:
            label = FEMALE
        elif score < 0:
            label = MALE
        else:
            label = na_policy
        confidence = abs(score) / total_weight if total_weight > 0 else 0.0
        consensus[name] = (label, confidence)
    return consensus


def cct_fit(
    reports: Sequence[tuple[int, str, int]],
    max_iters: int = 50,
    tol: float = 1e-4,
    na_policy: int = MALE,
) -> CCTModel:
    """Alternate consensus voting and per-source competence updates.

    Sources start just above coin-flip competence so the first vote is
    an unweighted majority.  Each round then reweights votes by the
    log-odds of source competence and re-scores each source as the
    fraction of its reports agreeing with the consensus, clamped away
    from 0 and 1 so no source gains infinite weight.  Stops when
    competences move less than ``tol``.
    """
    if not reports:
        raise ValueError("need at least one report")
    if na_policy not in (MALE, FEMALE):
        raise ValueError("na_policy must be 0 (male) or 1 (female)")
    reports_by_name: dict[str, list[tuple[int, int]]] = {}
    reports_by_source: dict[int, list[tuple[str, int]]] = {}
    for source, name, label in reports:
        if label not in (MALE, FEMALE):
            raise ValueError(f"report label must be 0 or 1, got {label!r}")
        reports_by_name.setdefault(name, []).append((source, label))
        reports_by_source.setdefault(source, []).append((name, label))

    competences = {source: COMPETENCE_INIT for source in reports_by_source}
    consensus: dict[str, tuple[int, float]] = {}
    iterations = 0
    for iterations in range(1, max_iters + 1):
        weights = {
            source: math.log(theta / (1.0 - theta))
            for source, theta in competences.items()
        }
        consensus = _weighted_consensus(reports_by_name, weights, na_policy)
        delta = 0.0
        for source, votes in reports_by_source.items():
            agree = sum(1 for name, label in votes if consensus[name][0] == label)
            theta = agree / len(votes)
            theta = min(COMPETENCE_CEIL, max(COMPETENCE_FLOOR, theta))
            delta = max(delta, abs(theta - competences[source]))
            competences[source] = theta
        if delta < tol:
            break
    return CCTModel(competences, consensus, na_policy, iterations)


def cct_predict(model: CCTModel, name: str) -> int:
    """Consensus label for seen names, the NA policy label otherwise."""
    entry = model.consensus.get(name)
    return entry[0] if entry is not None else model.na_policy


# ---------------------------------------------------------------------------
# Conversion through the most likely character form
# ---------------------------------------------------------------------------

class CharGenderPredictor(Protocol):
    def predict(self, chars: Sequence[str]) -> tuple[int, float]: ...


def most_likely_hanzi(stats: NameStatistics, syllables: Sequence[str]) -> tuple[str, ...]:
    """Most frequent character name for a syllable sequence.

    Falls back to the per-syllable argmax character when the full
    sequence was never observed; a syllable absent from even the
    per-syllable store raises :class:`UnknownSyllableError`.  Ties
    break toward the smallest codepoint sequence for determinism.
    """
    key = tuple(syllables)
    counter = stats.pinyin_to_hanzi_counts.get(key)
    if counter:
        best = min(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        return tuple(best)
    chars = []
    for syllable in syllables:
        per_char = stats.syllable_to_char_counts.get(syllable)
        if not per_char:
            raise UnknownSyllableError(syllable)
        chars.append(min(per_char.items(), key=lambda kv: (-kv[1], kv[0]))[0])
    return tuple(chars)


def conversion_predict(
    stats: NameStatistics,
    teacher: CharGenderPredictor,
    syllables: Sequence[str],
) -> int:
    """Map the syllables to their most likely character name, then ask
    the character-level gender model."""
    hanzi = most_likely_hanzi(stats, syllables)
    label, _ = teacher.predict(hanzi)
    return label
