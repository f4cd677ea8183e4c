import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texdistill.containers import load_pgm
from texdistill.metrics import (ConfusionMatrix, Metrics, aggregate_runs, confusion_matrix, evaluate, score,
                                metrics_from_confusion, save_confusion_pgm, write_metrics_csv)


def test_perfect_predictor():
    y = np.repeat(np.arange(4), 5)
    m, cm = score(y, y, 4)
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)
    np.testing.assert_array_equal(cm.counts, np.diag([5] * 4))


def test_constant_predictor():
    y = np.repeat(np.arange(4), 5)
    m, _ = score(y, np.zeros_like(y), 4)
    assert m.accuracy == 0.25 and m.recall == 0.25
    assert m.precision == pytest.approx(0.25 / 4)  # only class 0 is ever predicted
    assert m.support == [5, 5, 5, 5]


def _tally(y, p, C):
    """Per-class counts by explicit loops."""
    prec, rec, f1 = [], [], []
    for c in range(C):
        tp = sum(1 for a, b in zip(y, p) if a == c and b == c)
        pp = sum(1 for b in p if b == c)
        sp = sum(1 for a in y if a == c)
        pr = tp / pp if pp else 0.0
        rc = tp / sp if sp else 0.0
        prec.append(pr)
        rec.append(rc)
        f1.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    return np.mean(prec), np.mean(rec), np.mean(f1)


labels = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60)


@settings(max_examples=80, deadline=None)
@given(labels)
def test_metrics_match_tally(pairs):
    y, p = map(np.array, zip(*pairs))
    m, cm = score(y, p, 4)
    assert m.accuracy == pytest.approx(np.trace(cm.counts) / cm.counts.sum(), abs=1e-12)
    pr, rc, f1 = _tally(y, p, 4)
    assert (m.precision, m.recall, m.f1) == pytest.approx((pr, rc, f1), abs=1e-12)
    for v in (m.accuracy, m.precision, m.recall, m.f1):
        assert 0.0 <= v <= 1.0


@settings(max_examples=50, deadline=None)
@given(labels, st.permutations(range(4)))
def test_macro_scores_ignore_relabelling(pairs, perm):
    y, p = map(np.array, zip(*pairs))
    perm = np.array(perm)
    a, _ = score(y, p, 4)
    b, _ = score(perm[y], perm[p], 4)
    assert (a.precision, a.recall, a.f1) == pytest.approx((b.precision, b.recall, b.f1), abs=1e-12)


def test_empty_confusion_errors():
    with pytest.raises(ValueError, match="empty"):
        metrics_from_confusion(ConfusionMatrix(np.zeros((4, 4), np.int64)))
    with pytest.raises(ValueError, match="mismatch"):
        confusion_matrix([0, 1], [0], 4)


def _m(acc):
    return Metrics(acc, acc, acc, acc, [1, 1])


def test_aggregate_two_runs():
    rep = aggregate_runs([_m(0.6), _m(0.7)])
    assert rep["accuracy"]["mean"] == pytest.approx(0.65)
    assert rep["accuracy"]["std"] == pytest.approx(0.0707, abs=1e-4)
    assert aggregate_runs([_m(0.5), _m(0.5)])["f1"]["std"] == 0.0


def test_aggregate_confusions_and_errors():
    a = ConfusionMatrix(np.array([[2, 0], [1, 1]]))
    b = ConfusionMatrix(np.array([[2, 0], [0, 2]]))
    rep = aggregate_runs([a, b])
    np.testing.assert_allclose(rep["confusion"].counts, [[2, 0], [0.5, 1.5]])
    with pytest.raises(ValueError, match="at least 2"):
        aggregate_runs([_m(0.5)])
    with pytest.raises(ValueError, match="classes"):
        aggregate_runs([_m(0.5), Metrics(0.5, 0.5, 0.5, 0.5, [1, 1, 1])])


def test_report_files(tmp_path):
    write_metrics_csv(tmp_path / "m.csv", [{"a": 1, "b": 2}, {"a": 3, "c": 4}])
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "a,b,c"
    save_confusion_pgm(tmp_path / "c.pgm", ConfusionMatrix(np.array([[3, 1], [0, 4]])), cell=2)
    px = load_pgm(tmp_path / "c.pgm")
    assert px.shape == (4, 4)
    assert px[0, 0] == round(0.75 * 255) and px[2, 2] == 255 and px[2, 0] == 0


def test_evaluate_on_tiny_data(tiny_data):
    from texdistill.models import StudentNet
    m, cm = evaluate(StudentNet(), tiny_data, "test")
    assert cm.counts.sum() == len(tiny_data.test)
    assert sum(m.support) == len(tiny_data.test)
