import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score, matthews_corrcoef

from oracles import f1_macro_brute, mcc_brute, two_item_metrics
from pccd.metrics import (MetricsReport, classification_metrics, confusion_matrix, paired_t_test, report,
                          retrieval_metrics, triplet_retrieval)
from pccd.model import CLOSER, FARTHER, LABELS, SIMILAR


@pytest.mark.filterwarnings("ignore:A single label:UserWarning")
def test_against_brute_force_and_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        truth = [LABELS[i] for i in rng.integers(0, 3, n)]
        pred = [LABELS[i] for i in rng.integers(0, int(rng.integers(1, 4)), n)]
        acc, f1, mcc = classification_metrics(pred, truth)
        assert acc == pytest.approx(np.mean([p == t for p, t in zip(pred, truth)]), abs=1e-12)
        assert f1 == pytest.approx(f1_macro_brute(pred, truth, LABELS), abs=1e-12)
        assert mcc == pytest.approx(mcc_brute(pred, truth, LABELS), abs=1e-12)
        assert f1 == pytest.approx(f1_score(truth, pred, labels=list(LABELS), average="macro", zero_division=0), abs=1e-12)
        assert mcc == pytest.approx(matthews_corrcoef(truth, pred), abs=1e-12)


def test_perfect_and_inverted():
    truth = [FARTHER, SIMILAR, CLOSER] * 4
    assert classification_metrics(truth, truth) == (1.0, 1.0, 1.0)
    acc, _, mcc = classification_metrics([CLOSER, SIMILAR, FARTHER] * 4, truth)
    assert acc == pytest.approx(1 / 3) and mcc == pytest.approx(0.0, abs=1e-15)
    assert classification_metrics([CLOSER, FARTHER, SIMILAR] * 4, truth)[2] < 0


def test_constant_prediction_mcc_zero():
    assert classification_metrics([SIMILAR] * 6, [FARTHER, SIMILAR, CLOSER] * 2)[2] == 0.0


def test_errors():
    with pytest.raises(ValueError):
        classification_metrics([], [])
    with pytest.raises(ValueError):
        classification_metrics([CLOSER], [CLOSER, FARTHER])


def test_confusion_rows_are_truth():
    cm = confusion_matrix([CLOSER, CLOSER], [FARTHER, CLOSER])
    assert cm[0, 2] == 1 and cm[2, 2] == 1 and cm.sum() == 2


@pytest.mark.parametrize("score", [0.9, 0.5, 0.1])
@pytest.mark.parametrize("label", LABELS)
def test_two_item_retrieval_matches_definitions(score, label):
    rel = {CLOSER: (1, 0), FARTHER: (0, 1), SIMILAR: (1, 1)}[label]
    ranked = rel if score >= 0.5 else rel[::-1]
    assert triplet_retrieval(score, label) == pytest.approx(two_item_metrics(*ranked), abs=1e-15)


def test_retrieval_known_values():
    assert triplet_retrieval(0.9, CLOSER) == (1.0, 1.0, 1.0)
    rr, ndcg, ap = triplet_retrieval(0.9, FARTHER)
    assert rr == 0.5 and ap == 0.5 and ndcg == pytest.approx(1 / np.log2(3))
    assert triplet_retrieval(0.1, SIMILAR) == (1.0, 1.0, 1.0)


def test_random_scores_mrr():
    rng = np.random.default_rng(1)
    n = 30000
    truth = [LABELS[i] for i in np.repeat([0, 1, 2], n // 3)]
    mrr, _, _ = retrieval_metrics(rng.random(n), truth)
    assert mrr == pytest.approx(5 / 6, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from(LABELS)), min_size=1, max_size=30))
def test_metrics_bounded(rows):
    rep = report([s for s, _ in rows], [t for _, t in rows])
    for name in ("acc", "f1_macro", "mrr", "ndcg", "map"):
        assert 0.0 <= getattr(rep, name) <= 1.0
    assert -1.0 <= rep.mcc <= 1.0
    assert rep.n_triplets == len(rows)


def test_report_serialisation(tmp_path):
    rep = report([0.1, 0.5, 0.9], [FARTHER, SIMILAR, CLOSER])
    assert rep.acc == 1.0
    assert MetricsReport.from_json(rep.to_json()) == rep
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "metric,value" and lines[1] == "acc,1.0"
    assert json.loads(rep.to_json())["confusion"] == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]


def test_paired_t_test():
    from scipy import stats

    a, b = [0.8, 0.82, 0.79, 0.85, 0.81], [0.4, 0.35, 0.41, 0.38, 0.45]
    t, p = paired_t_test(a, b)
    ref = stats.ttest_rel(a, b)
    assert t == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(2 * stats.norm.sf(abs(ref.statistic)), rel=1e-9)
    assert p <= ref.pvalue
    assert paired_t_test([1, 2], [1, 2]) == (0.0, 1.0)
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])
