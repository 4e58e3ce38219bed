"""Model and baseline evaluation: reports, user-type analysis, sparsity sweeps, ablations."""

from __future__ import annotations

import csv
import logging
from dataclasses import replace

import numpy as np

from .graph import MO, MU, SO
from .mapequation import detect_communities
from .metrics import SCORE_OF_LABEL, report
from .model import SIDES
from .training import label_triplet, predict_scores, prepare_experiment, sample_triplets, train

log = logging.getLogger(__name__)

ABLATIONS = {
    "rcr": {"use_rcr": False},
    "dtr": {"use_dtr": False},
    "nf": {"use_nf": False},
    "cf": {"use_cf": False},
    "cc": {"alpha": 0.0},
    "mt": {"rho": 0.0},
}


def evaluate_model(model, features, triplets):
    scores = predict_scores(model, features, triplets)
    return report(scores, [t.label for t in triplets])


def evaluate_partition(communities, triplets):
    """Score triplets labelled by a hard community map (users missing from it are singletons)."""
    def comm(u):
        c = communities.get(u)
        return ("singleton", u) if c is None else c

    predicted = [label_triplet(t.i, t.j, t.k, {u: comm(u) for u in (t.i, t.j, t.k)}).label
                 for t in triplets]
    scores = [SCORE_OF_LABEL[p] for p in predicted]
    return report(scores, [t.label for t in triplets], predicted)


def random_baseline(users, num_communities, truth, triplets, seed):
    """Assign ``users`` uniformly to ``num_communities`` groups and label triplets from that."""
    if num_communities < 2:
        raise ValueError("num_communities must be >= 2")
    missing = [u for t in triplets for u in (t.i, t.j, t.k) if u not in truth]
    if missing:
        raise KeyError(f"triplet user {missing[0]!r} has no ground truth")
    rng = np.random.default_rng(seed)
    users = list(users)
    assign = dict(zip(users, rng.integers(0, num_communities, size=len(users)).tolist()))
    return evaluate_partition(assign, triplets)


def infomap_baseline(graph, triplets, seed, trials=3):
    """Label triplets from map-equation communities of ``graph`` (typically the sparse view)."""
    part = detect_communities(graph, seed=seed, trials=trials)
    comms = {u: part.user_community(u) for u in graph.user_ids}
    return evaluate_partition(comms, triplets)


def user_type_eval(model, features, dataset, truth, count_per_label, seed):
    """Reports on single-type triplets (all three members MU, MO or SO)."""
    out = {}
    for n, kind in enumerate((MU, MO, SO)):
        users = [u for u in dataset.users_of_type(kind) if u in truth]
        triplets = sample_triplets(users, truth, count_per_label, seed + n)
        out[kind] = evaluate_model(model, features, triplets)
    return out


def run_experiment(dataset, truth, cfg):
    """Prepare, train and evaluate once.  Returns ``(experiment, train_result, report)``."""
    ex = prepare_experiment(dataset, truth, cfg)
    result = train(ex.features, ex.train_triplets, cfg, ex.validation_triplets)
    return ex, result, evaluate_model(result.model, ex.features, ex.test_triplets)


def sparsity_sweep(dataset, truth, cfg, deltas, seed=None):
    """Train on the full main graph and each sparsified sparse graph; evaluate on fixed truth."""
    deltas = list(deltas)
    if not deltas:
        raise ValueError("empty delta list")
    rows = []
    for delta in deltas:
        run_cfg = replace(cfg, sparse_delta=delta, seed=cfg.seed if seed is None else seed)
        _, _, rep = run_experiment(dataset, truth, run_cfg)
        log.info("delta %.2f acc %.4f", delta, rep.acc)
        rows.append((delta, rep))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "acc", "f1", "mcc", "mrr", "ndcg", "map"])
        for delta, rep in rows:
            w.writerow([repr(float(delta))] + [repr(float(getattr(rep, m))) for m in rep.METRICS])


def ablation_config(cfg, names):
    updates = {}
    for name in names:
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        updates.update(ABLATIONS[name])
    return replace(cfg, **updates)


def ablation_study(dataset, truth, cfg, names=tuple(ABLATIONS)):
    """Full model plus one run per single-component ablation, all on the same triplets."""
    rows = {"full": run_experiment(dataset, truth, cfg)[2]}
    for name in names:
        rows[f"no-{name}"] = run_experiment(dataset, truth, ablation_config(cfg, [name]))[2]
    return rows


def affiliation_dump(model, features, users, side):
    """``(user, scores)`` rows of community affiliation for ``side`` in {"M", "S"}."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    users = list(users)
    P, Vc = features.inputs(users)
    scores = model.affiliations(side, P[side], Vc)
    return list(zip(users, scores))


def write_affiliations_csv(rows, path):
    K = len(rows[0][1]) if rows else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user"] + [f"c{k}" for k in range(K)])
        for u, s in rows:
            w.writerow([u] + [repr(float(x)) for x in s])
