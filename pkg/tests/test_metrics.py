"""Six-cell confusion matrix and the abstention-aware error metrics."""

import random

import pytest

from pinyingender.corpus import FEMALE, MALE
from pinyingender.metrics import (
    ConfusionMatrix6,
    PredictionRecord,
    compute_error_metrics,
    compute_prf,
    compute_report,
    format_report,
    import_predictions,
    report_rows,
    tally_confusion,
    write_predictions,
)


def random_matrix(rng, allow_zero_classified=False):
    while True:
        cm = ConfusionMatrix6(*(rng.randint(0, 50) for _ in range(6)))
        if cm.total == 0:
            continue
        if cm.classified == 0 and not allow_zero_classified:
            continue
        return cm


class TestTally:
    def test_each_outcome_increments_one_cell(self):
        truth = [("a", MALE), ("b", MALE), ("c", MALE),
                 ("d", FEMALE), ("e", FEMALE), ("f", FEMALE)]
        preds = [PredictionRecord("a", "male"), PredictionRecord("b", "female"),
                 PredictionRecord("c", "unknown"), PredictionRecord("d", "male"),
                 PredictionRecord("e", "female"), PredictionRecord("f", "unknown")]
        cm = tally_confusion(truth, preds)
        assert (cm.m_m, cm.m_f, cm.m_u, cm.f_m, cm.f_f, cm.f_u) == \
            (1, 1, 1, 1, 1, 1)
        assert cm.total == 6

    def test_missing_prediction_errors(self):
        with pytest.raises(ValueError):
            tally_confusion([("a", MALE)], [])

    def test_extra_prediction_errors(self):
        with pytest.raises(ValueError):
            tally_confusion([("a", MALE)],
                            [PredictionRecord("a", "male"),
                             PredictionRecord("b", "male")])

    def test_duplicate_names_join_by_ordinal(self):
        truth = [("yan", FEMALE), ("yan", MALE)]
        preds = [PredictionRecord("yan", "female"), PredictionRecord("yan", "male")]
        cm = tally_confusion(truth, preds)
        assert cm.f_f == 1 and cm.m_m == 1

    def test_order_of_predictions_irrelevant(self):
        rng = random.Random(3)
        truth = [(f"name{i}", rng.randint(0, 1)) for i in range(30)]
        labels = [rng.choice(["male", "female", "unknown"]) for _ in range(30)]
        preds = [PredictionRecord(name, label)
                 for (name, _), label in zip(truth, labels)]
        shuffled = preds[:]
        rng.shuffle(shuffled)
        # same-name ordinal pairing only matters for duplicates; none here
        assert tally_confusion(truth, preds) == tally_confusion(truth, shuffled)

    def test_bad_label_rejected_at_construction(self):
        with pytest.raises(ValueError):
            PredictionRecord("yan", "NA")


class TestErrorMetrics:
    def test_hand_computed_matrix(self):
        cm = ConfusionMatrix6(m_m=4, m_f=1, m_u=1, f_m=1, f_f=3, f_u=0)
        report = compute_error_metrics(cm)
        assert report.error_coded == pytest.approx(0.3, abs=1e-12)
        assert report.error_coded_without_na == pytest.approx(2 / 9, abs=1e-12)
        assert report.na_coded == pytest.approx(0.1, abs=1e-12)
        assert report.error_gender_bias == pytest.approx(0.0, abs=1e-12)

    def test_no_abstentions_collapses_the_two_error_rates(self):
        # same structure as a zero-naCoded service row: both rates equal
        cm = ConfusionMatrix6(m_m=300, m_f=80, m_u=0, f_m=70, f_f=250, f_u=0)
        report = compute_error_metrics(cm)
        assert report.na_coded == 0.0
        assert report.error_coded == report.error_coded_without_na

    def test_all_correct_is_zero_error(self):
        report = compute_error_metrics(ConfusionMatrix6(m_m=5, f_f=7))
        assert report.error_coded == 0.0
        assert report.error_gender_bias == 0.0

    def test_identity_on_random_matrices(self):
        rng = random.Random(99)
        for _ in range(2000):
            cm = random_matrix(rng)
            report = compute_error_metrics(cm)
            reconstructed = report.na_coded + \
                report.error_coded_without_na * (1 - report.na_coded)
            assert abs(report.error_coded - reconstructed) < 1e-12

    def test_row_swap_negates_bias_only(self):
        rng = random.Random(7)
        for _ in range(200):
            cm = random_matrix(rng)
            swapped = ConfusionMatrix6(m_m=cm.f_f, m_f=cm.f_m, m_u=cm.f_u,
                                       f_m=cm.m_f, f_f=cm.m_m, f_u=cm.m_u)
            a = compute_error_metrics(cm)
            b = compute_error_metrics(swapped)
            assert a.error_coded == pytest.approx(b.error_coded, abs=1e-12)
            assert a.error_coded_without_na == pytest.approx(
                b.error_coded_without_na, abs=1e-12)
            assert a.na_coded == pytest.approx(b.na_coded, abs=1e-12)
            assert a.error_gender_bias == pytest.approx(
                -b.error_gender_bias, abs=1e-12)

    def test_zero_classified_reports_undefined(self):
        report = compute_error_metrics(ConfusionMatrix6(m_u=3, f_u=2))
        assert report.error_coded == 1.0
        assert report.error_coded_without_na is None
        assert report.error_gender_bias is None
        assert "no_classified_records" in report.flags

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            compute_error_metrics(ConfusionMatrix6())

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix6(m_m=-1)


class TestPrf:
    def test_symmetric_case(self):
        cm = ConfusionMatrix6(m_m=4, f_f=4, m_f=1, f_m=1)
        report = compute_prf(cm)
        assert report.accuracy == pytest.approx(0.8)
        assert report.precision == pytest.approx(0.8)
        assert report.recall == pytest.approx(0.8)
        assert report.f1 == pytest.approx(0.8)

    def test_perfect_matrix(self):
        report = compute_prf(ConfusionMatrix6(m_m=10, f_f=5))
        assert (report.accuracy, report.precision, report.recall, report.f1) == \
            (1.0, 1.0, 1.0, 1.0)

    def test_single_class_predictions_flagged(self):
        # everything predicted female
        report = compute_prf(ConfusionMatrix6(m_f=5, f_f=5))
        assert any(flag.startswith("zero_denominator") for flag in report.flags)
        assert report.accuracy == 0.5

    def test_tally_then_compute_stable_under_permutation(self):
        rng = random.Random(13)
        truth = [(f"n{i}", rng.randint(0, 1)) for i in range(50)]
        preds = [PredictionRecord(name, rng.choice(["male", "female", "unknown"]))
                 for name, _ in truth]
        report_a = compute_report(tally_confusion(truth, preds))
        shuffled = preds[:]
        rng.shuffle(shuffled)
        report_b = compute_report(tally_confusion(truth, shuffled))
        assert report_a == report_b

    def test_abstentions_excluded_from_classified_metrics(self):
        cm = ConfusionMatrix6(m_m=4, f_f=4, m_u=100, f_u=100)
        report = compute_prf(cm)
        assert report.accuracy == 1.0


class TestPredictionFiles:
    def test_import_normalizes_case(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("pinyin,predicted\nyan,FEMALE\nwei,Male\n", encoding="utf-8")
        result = import_predictions(path)
        assert [p.predicted for p in result.predictions] == ["female", "male"]
        assert result.rejects == []

    def test_na_spelling_rejected_with_row(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("pinyin,predicted\nyan,NA\n", encoding="utf-8")
        result = import_predictions(path)
        assert result.predictions == []
        assert result.rejects[0].row == 2

    def test_empty_file_after_header(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("pinyin,predicted\n", encoding="utf-8")
        result = import_predictions(path)
        assert result.predictions == [] and result.rejects == []

    def test_missing_header_errors(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("name,label\nyan,male\n", encoding="utf-8")
        with pytest.raises(ValueError):
            import_predictions(path)

    def test_roundtrip(self, tmp_path):
        preds = [PredictionRecord("yan", "female"),
                 PredictionRecord("bo", "unknown")]
        path = tmp_path / "p.csv"
        write_predictions(path, preds)
        assert import_predictions(path).predictions == preds

    def test_report_rows_and_format(self):
        report = compute_report(ConfusionMatrix6(m_m=4, m_f=1, m_u=1,
                                                 f_m=1, f_f=3, f_u=0))
        rows = dict(report_rows(report))
        assert rows["errorCoded"] == "0.300000"
        assert rows["naCoded"] == "0.100000"
        text = format_report(report)
        assert "errorCodedWithoutNA" in text

    def test_undefined_surfaces_as_text(self):
        report = compute_error_metrics(ConfusionMatrix6(m_u=1))
        rows = dict(report_rows(report))
        assert rows["errorCodedWithoutNA"] == "undefined"
