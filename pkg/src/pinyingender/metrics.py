"""Scoring with an abstaining predictor: six-cell confusion matrix.

Predictions carry one of three labels (male, female, unknown) while
the truth is binary, giving six outcome cells.  The error metrics
derived from them treat non-classifications explicitly instead of
folding them into mistakes, and the usual accuracy/precision/recall/F1
are computed over classified records only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .corpus import FEMALE, MALE, RejectedRow

LABELS = ("male", "female", "unknown")


@dataclass(frozen=True)
class PredictionRecord:
    name: str
    predicted: str

    def __post_init__(self):
        if self.predicted not in LABELS:
            raise ValueError(f"predicted label must be one of {LABELS}")


@dataclass
class ConfusionMatrix6:
    """Counts indexed truth-then-prediction: m_f is true male, called female."""

    m_m: int = 0
    m_f: int = 0
    m_u: int = 0
    f_m: int = 0
    f_f: int = 0
    f_u: int = 0

    def __post_init__(self):
        if min(self.m_m, self.m_f, self.m_u, self.f_m, self.f_f, self.f_u) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.m_m + self.m_f + self.m_u + self.f_m + self.f_f + self.f_u

    @property
    def classified(self) -> int:
        return self.total - self.m_u - self.f_u


@dataclass
class MetricReport:
    """Derived metrics; ``None`` marks a metric whose denominator is zero."""

    error_coded: Optional[float] = None
    error_coded_without_na: Optional[float] = None
    na_coded: Optional[float] = None
    error_gender_bias: Optional[float] = None
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    flags: tuple[str, ...] = ()

    FIELDS = (
        "error_coded", "error_coded_without_na", "na_coded", "error_gender_bias",
        "accuracy", "precision", "recall", "f1",
    )

    def merged(self, other: "MetricReport") -> "MetricReport":
        out = MetricReport(flags=self.flags + other.flags)
        for name in self.FIELDS:
            mine, theirs = getattr(self, name), getattr(other, name)
            setattr(out, name, theirs if theirs is not None else mine)
        return out


def tally_confusion(
    truth: Sequence[tuple[str, int]],
    preds: Sequence[PredictionRecord],
) -> ConfusionMatrix6:
    """Pair truth records with predictions and count outcomes.

    Predictions may arrive in any order; pairing joins on the name and
    the occurrence ordinal, so duplicate names are matched first to
    first, second to second.  A truth record without a prediction is an
    error: abstentions must be written out as explicit ``unknown``.
    """
    by_name: dict[str, list[PredictionRecord]] = {}
    for pred in preds:
        by_name.setdefault(pred.name, []).append(pred)
    cursor: dict[str, int] = {}
    cm = ConfusionMatrix6()
    for name, gender in truth:
        queue = by_name.get(name, [])
        position = cursor.get(name, 0)
        if position >= len(queue):
            raise ValueError(f"no prediction for truth record {name!r}")
        cursor[name] = position + 1
        predicted = queue[position].predicted
        if gender == MALE:
            if predicted == "male":
                cm.m_m += 1
            elif predicted == "female":
                cm.m_f += 1
            else:
                cm.m_u += 1
        elif gender == FEMALE:
            if predicted == "male":
                cm.f_m += 1
            elif predicted == "female":
                cm.f_f += 1
            else:
                cm.f_u += 1
        else:
            raise ValueError(f"truth gender must be 0 or 1, got {gender!r}")
    matched = sum(cursor.values())
    if matched != len(preds):
        raise ValueError(f"{len(preds) - matched} predictions matched no truth record")
    return cm


def compute_error_metrics(cm: ConfusionMatrix6) -> MetricReport:
    """Abstention-aware error rates from the six cells.

    error_coded counts wrong and missing answers together; the
    without-NA variant conditions on having answered; na_coded is the
    abstention rate; gender bias is positive when true males are
    misclassified more often than true females.
    """
    n = cm.total
    if n == 0:
        raise ValueError("cannot score an empty confusion matrix")
    c = cm.classified
    report = MetricReport(
        error_coded=(cm.f_m + cm.m_f + cm.m_u + cm.f_u) / n,
        na_coded=(cm.m_u + cm.f_u) / n,
    )
    if c > 0:
        report.error_coded_without_na = (cm.f_m + cm.m_f) / c
        report.error_gender_bias = (cm.m_f - cm.f_m) / c
    else:
        report.flags += ("no_classified_records",)
    return report


def _safe_ratio(num: int, den: int, flags: list[str], what: str) -> float:
    if den == 0:
        flags.append(f"zero_denominator:{what}")
        return 0.0
    return num / den


def compute_prf(cm: ConfusionMatrix6) -> MetricReport:
    """Accuracy plus macro precision/recall/F1 over classified records."""
    c = cm.classified
    if c == 0:
        raise ValueError("precision/recall need at least one classified record")
    flags: list[str] = []
    p_male = _safe_ratio(cm.m_m, cm.m_m + cm.f_m, flags, "precision_male")
    r_male = _safe_ratio(cm.m_m, cm.m_m + cm.m_f, flags, "recall_male")
    p_female = _safe_ratio(cm.f_f, cm.f_f + cm.m_f, flags, "precision_female")
    r_female = _safe_ratio(cm.f_f, cm.f_f + cm.f_m, flags, "recall_female")

    def f1_of(p: float, r: float, what: str) -> float:
        if p + r == 0:
            flags.append(f"zero_denominator:{what}")
            return 0.0
        return 2 * p * r / (p + r)

    f1_male = f1_of(p_male, r_male, "f1_male")
    f1_female = f1_of(p_female, r_female, "f1_female")
    return MetricReport(
        accuracy=(cm.m_m + cm.f_f) / c,
        precision=(p_male + p_female) / 2,
        recall=(r_male + r_female) / 2,
        f1=(f1_male + f1_female) / 2,
        flags=tuple(flags),
    )


def compute_report(cm: ConfusionMatrix6) -> MetricReport:
    """Error metrics merged with PRF when the latter is defined."""
    report = compute_error_metrics(cm)
    if cm.classified > 0:
        report = report.merged(compute_prf(cm))
    return report


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

@dataclass
class ImportResult:
    predictions: list[PredictionRecord]
    rejects: list[RejectedRow]


def import_predictions(path) -> ImportResult:
    """Read a ``pinyin,predicted`` CSV; unknown labels become rejects.

    Labels are normalized case-insensitively to male/female/unknown.
    Anything else (including NA spellings) is rejected with its row
    number: abstentions must be spelled ``unknown``.
    """
    predictions: list[PredictionRecord] = []
    rejects: list[RejectedRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"pinyin", "predicted"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected a CSV header with pinyin,predicted")
        for number, row in enumerate(reader, start=2):
            name = (row.get("pinyin") or "").strip()
            label = (row.get("predicted") or "").strip().lower()
            if not name:
                rejects.append(RejectedRow(number, "empty pinyin"))
            elif label not in LABELS:
                rejects.append(RejectedRow(number, f"unrecognized label {label!r}"))
            else:
                predictions.append(PredictionRecord(name, label))
    return ImportResult(predictions, rejects)


def write_predictions(path, preds: Iterable[PredictionRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pinyin", "predicted"])
        for pred in preds:
            writer.writerow([pred.name, pred.predicted])


def report_rows(report: MetricReport) -> list[tuple[str, str]]:
    """(metric, value) pairs for the machine-readable CSV."""
    names = {
        "error_coded": "errorCoded",
        "error_coded_without_na": "errorCodedWithoutNA",
        "na_coded": "naCoded",
        "error_gender_bias": "errorGenderBias",
        "accuracy": "accuracy",
        "precision": "precision",
        "recall": "recall",
        "f1": "f1",
    }
    rows = []
    for field_name, metric in names.items():
        value = getattr(report, field_name)
        rows.append((metric, "undefined" if value is None else f"{value:.6f}"))
    return rows


def format_report(report: MetricReport) -> str:
    width = max(len(m) for m, _ in report_rows(report))
    lines = [f"{metric.ljust(width)}  {value}" for metric, value in report_rows(report)]
    if report.flags:
        lines.append("flags: " + ", ".join(report.flags))
    return "\n".join(lines)
