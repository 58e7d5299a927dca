import csv

import numpy as np
import pytest

from charcnn.errors import InputError
from charcnn.metrics import (
    ConfusionCounts,
    RocPoint,
    accuracy,
    auc,
    confusion,
    evaluate_predictions,
    precision_recall,
    roc_curve,
    write_auc_summary,
    write_predictions,
    write_roc,
)
from oracles import confusion_recount, rank_auc, roc_sweep


def test_accuracy():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([0, 0], [1, 1]) == 0.0
    assert accuracy(list(range(9)) + [0], list(range(10))) == 0.9
    with pytest.raises(InputError):
        accuracy([1], [1, 2])


def test_confusion_table_style_error():
    # true 't' (index 46) predicted as 'F' (index 15)
    truth = [31, 0, 46, 14]
    pred = [31, 0, 15, 14]
    matrix, counts = confusion(pred, truth, 47)
    assert matrix[46, 15] == 1
    assert counts[46] == ConfusionCounts(tp=0, fp=0, fn=1, tn=3)
    assert counts[15] == ConfusionCounts(tp=0, fp=1, fn=0, tn=3)


def test_confusion_all_correct_is_diagonal():
    matrix, _ = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    np.testing.assert_array_equal(matrix, np.diag([1, 1, 2]))


def test_confusion_matches_recount(rng):
    truth = rng.integers(0, 3, 50)
    pred = rng.integers(0, 3, 50)
    matrix, counts = confusion(pred, truth, 3)
    assert [(c.tp, c.fp, c.fn, c.tn) for c in counts] == confusion_recount(pred, truth, 3)
    np.testing.assert_array_equal(matrix.sum(axis=1), np.bincount(truth, minlength=3))
    assert matrix.sum() == 50
    assert accuracy(pred, truth) == np.trace(matrix) / matrix.sum()
    assert all(c.tp + c.fp + c.fn + c.tn == 50 for c in counts)


def test_confusion_rejects_out_of_range():
    with pytest.raises(InputError):
        confusion([3], [0], 3)


def test_roc_perfect_and_uninformative():
    pts = roc_curve([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
    assert (0.0, 1.0) in [(p.fpr, p.tpr) for p in pts]
    assert auc(pts) == 1.0
    flat = roc_curve([0.5] * 6, [True, False] * 3)
    assert [(p.fpr, p.tpr) for p in flat] == [(0.0, 0.0), (1.0, 1.0)]
    assert auc(flat) == 0.5


def test_roc_matches_threshold_sweep(rng):
    scores = np.round(rng.random(20), 1)  # coarse rounding creates ties
    positive = rng.random(20) < 0.5
    positive[:2] = [True, False]
    pts = roc_curve(scores, positive)
    assert [(p.fpr, p.tpr) for p in pts] == pytest.approx(roc_sweep(scores, positive), abs=0)
    assert pts[0].threshold == np.inf
    assert (pts[-1].fpr, pts[-1].tpr) == (1.0, 1.0)
    assert all(a.fpr <= b.fpr and a.tpr <= b.tpr for a, b in zip(pts, pts[1:]))


def test_roc_degenerate_truth():
    with pytest.raises(InputError):
        roc_curve([0.1, 0.2], [True, True])


@pytest.mark.parametrize("trial", range(20))
def test_auc_matches_rank_statistic(trial):
    r = np.random.default_rng(trial)
    n = int(r.integers(2, 201))
    scores = np.round(r.random(n), int(r.integers(1, 4)))
    positive = r.random(n) < r.uniform(0.1, 0.9)
    positive[0], positive[-1] = True, False
    assert abs(auc(roc_curve(scores, positive)) - rank_auc(scores, positive)) <= 1e-12


def test_auc_needs_two_sorted_points():
    with pytest.raises(InputError):
        auc([RocPoint(0.5, 0.0, 0.0)])
    with pytest.raises(InputError):
        auc([RocPoint(1, 0, 0.5), RocPoint(0, 1, 0.2)])


def test_precision_recall():
    assert precision_recall(ConfusionCounts(5, 0, 0, 10)) == (1.0, 1.0)
    assert precision_recall(ConfusionCounts(1, 1, 3, 0)) == (0.5, 0.25)
    assert precision_recall(ConfusionCounts(0, 0, 2, 5))[0] is None


def test_report_and_csvs(tmp_path, rng):
    probs = rng.dirichlet(np.ones(4), 30)
    truth = rng.integers(0, 3, 30)  # class 3 never occurs
    report = evaluate_predictions(probs, truth)
    assert report.accuracy == accuracy(np.argmax(probs, axis=1), truth)
    assert 3 not in report.auc and set(report.auc) == {0, 1, 2}

    write_predictions(tmp_path / "p.csv", probs, truth)
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["sample_index", "true_class", "pred_class", "score_0", "score_1", "score_2", "score_3"]
    assert len(rows) == 31

    paths = write_roc(tmp_path / "roc", report)
    assert len(paths) == 3
    assert next(csv.reader(open(paths[0]))) == ["class", "threshold", "fpr", "tpr"]

    write_auc_summary(tmp_path / "auc.csv", report, list("wxyz"))
    rows = list(csv.reader(open(tmp_path / "auc.csv")))
    assert rows[0] == ["class", "char", "auc"]
    assert rows[4] == ["3", "z", ""]
