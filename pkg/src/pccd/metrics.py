"""Classification and within-triplet retrieval metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import CLOSER, FARTHER, LABELS, SIMILAR

_INDEX = {lab: i for i, lab in enumerate(LABELS)}


@dataclass
class MetricsReport:
    acc: float
    f1_macro: float
    mcc: float
    mrr: float
    ndcg: float
    map: float
    n_triplets: int
    confusion: list = field(default_factory=list)  # rows = truth, cols = predicted, LABELS order

    METRICS = ("acc", "f1_macro", "mcc", "mrr", "ndcg", "map")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for name in self.METRICS:
                w.writerow([name, repr(float(getattr(self, name)))])
            w.writerow(["n_triplets", self.n_triplets])


def confusion_matrix(predicted, truth):
    cm = np.zeros((3, 3), dtype=int)
    for p, t in zip(predicted, truth):
        cm[_INDEX[t], _INDEX[p]] += 1
    return cm


def classification_metrics(predicted, truth):
    """``(acc, f1_macro, mcc)`` over the three closeness labels.

    MCC is the multiclass (Gorodkin) generalisation, 0 when undefined.
    """
    if len(predicted) != len(truth):
        raise ValueError("label sequences differ in length")
    if not len(truth):
        raise ValueError("empty label sequences")
    cm = confusion_matrix(predicted, truth)
    n = cm.sum()
    correct = np.trace(cm)
    f1s = []
    for c in range(3):
        tp = cm[c, c]
        denom = cm[c, :].sum() + cm[:, c].sum()
        f1s.append(2.0 * tp / denom if denom and tp else 0.0)
    t_k = cm.sum(axis=1).astype(float)
    p_k = cm.sum(axis=0).astype(float)
    num = correct * n - p_k @ t_k
    den = math.sqrt((n * n - p_k @ p_k) * (n * n - t_k @ t_k))
    mcc = float(num / den) if den > 0 else 0.0
    return float(correct / n), float(np.mean(f1s)), mcc


def _relevance(label):
    if label == CLOSER:
        return (1, 0)
    if label == FARTHER:
        return (0, 1)
    return (1, 1)


def triplet_retrieval(score, label):
    """``(rr, ndcg, ap)`` for the two candidates of one triplet.

    ``j`` ranks first when ``score >= 0.5``.  Relevance: closer -> j only,
    farther -> k only, similar -> both.  NDCG uses cutoff 2 and binary gains.
    """
    rel_j, rel_k = _relevance(label)
    ranked = (rel_j, rel_k) if score >= 0.5 else (rel_k, rel_j)
    rr = next((1.0 / (r + 1) for r, rel in enumerate(ranked) if rel), 0.0)
    dcg = sum(rel / math.log2(r + 2) for r, rel in enumerate(ranked))
    ideal = sum(rel / math.log2(r + 2) for r, rel in enumerate(sorted(ranked, reverse=True)))
    hits, precisions = 0, []
    for r, rel in enumerate(ranked):
        if rel:
            hits += 1
            precisions.append(hits / (r + 1))
    ap = sum(precisions) / len(precisions) if precisions else 0.0
    return rr, dcg / ideal if ideal else 0.0, ap


def retrieval_metrics(scores, truth):
    if not len(truth):
        raise ValueError("empty input")
    rows = np.array([triplet_retrieval(float(s), t) for s, t in zip(scores, truth)])
    return tuple(float(x) for x in rows.mean(axis=0))


def report(scores, truth, predicted=None):
    """Full report from triplet scores in [0, 1]; ``predicted`` overrides score-thirds labels."""
    from .model import classify_score

    if predicted is None:
        predicted = [classify_score(float(s)) for s in scores]
    acc, f1, mcc = classification_metrics(predicted, truth)
    mrr, ndcg, ap = retrieval_metrics(scores, truth)
    return MetricsReport(acc, f1, mcc, mrr, ndcg, ap, len(truth),
                         confusion_matrix(predicted, truth).tolist())


SCORE_OF_LABEL = {FARTHER: 0.0, SIMILAR: 0.5, CLOSER: 1.0}


def paired_t_test(a, b):
    """Paired t statistic of ``a - b`` with a two-sided normal-approximation p-value.

    The normal tail understates p for a handful of runs; treat it as a rough guide.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.ndim != 1 or len(d) < 2:
        raise ValueError("need at least two paired runs of equal length")
    sd = d.std(ddof=1)
    if sd == 0:
        t = 0.0 if d.mean() == 0 else math.copysign(math.inf, d.mean())
    else:
        t = d.mean() / (sd / math.sqrt(len(d)))
    p = math.erfc(abs(t) / math.sqrt(2.0)) if math.isfinite(t) else 0.0
    return float(t), float(p)
