"""Triplet labelling and sampling, masked training and the Adam training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import MU, sparsify
from .mapequation import detect_communities
from .model import CLOSER, FARTHER, SIMILAR, FeatureView, ModelConfig, PccdModel

log = logging.getLogger(__name__)

LABEL_OF_Y = {0.0: FARTHER, 0.5: SIMILAR, 1.0: CLOSER}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class UserTriplet:
    i: str
    j: str
    k: str
    s_jk: int
    y: float

    @property
    def label(self):
        return LABEL_OF_Y[self.y]


def label_triplet(i, j, k, truth):
    """Closeness label of ``(i, j, k)`` under a community map."""
    if len({i, j, k}) != 3:
        raise ValueError("triplet members must be distinct")
    try:
        ci, cj, ck = truth[i], truth[j], truth[k]
    except KeyError as exc:
        raise KeyError(f"no ground-truth community for user {exc.args[0]!r}") from None
    same_j, same_k = cj == ci, ck == ci
    s = 1 if same_j and not same_k else -1 if same_k and not same_j else 0
    return UserTriplet(i, j, k, s, (1 + s) / 2)


def _available(users, truth):
    sizes: dict = {}
    for u in users:
        sizes[truth[u]] = sizes.get(truth[u], 0) + 1
    n = len(users)
    closer = sum((sizes[truth[u]] - 1) * (n - sizes[truth[u]]) for u in users)
    similar = sum((sizes[truth[u]] - 1) * (sizes[truth[u]] - 2)
                  + (n - sizes[truth[u]]) * (n - sizes[truth[u]] - 1) for u in users)
    return {CLOSER: closer, FARTHER: closer, SIMILAR: similar}


def sample_triplets(users, truth, count_per_label, seed, exclude=()):
    """Exactly ``count_per_label`` distinct triplets per label, uniform within each label.

    Ordered triples of distinct users are drawn uniformly and kept while their
    label bucket is short, so every bucket is a uniform sample of its label.
    ``exclude`` holds ``(i, j, k)`` keys that must not be returned.
    """
    users = [u for u in users if u in truth]
    avail = _available(users, truth)
    excluded = set(exclude)
    for lab, n in avail.items():
        if n < count_per_label:
            raise ValueError(f"infeasible label {lab!r}: only {n} triplets available for {count_per_label} requested")
    rng = np.random.default_rng(seed)
    buckets = {FARTHER: [], SIMILAR: [], CLOSER: []}
    seen = set(excluded)
    n = len(users)
    need = 3 * count_per_label
    got = 0
    while got < need:
        draw = rng.integers(0, n, size=(max(256, 4 * (need - got)), 3))
        for a, b, c in draw.tolist():
            if a == b or b == c or a == c:
                continue
            key = (users[a], users[b], users[c])
            if key in seen:
                continue
            t = label_triplet(*key, truth)
            bucket = buckets[t.label]
            if len(bucket) < count_per_label:
                seen.add(key)
                bucket.append(t)
                got += 1
                if got == need:
                    break
    out = buckets[FARTHER] + buckets[SIMILAR] + buckets[CLOSER]
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def split_triplets(triplets, holdout_fraction, seed):
    """Label-stratified split into ``(kept, held_out)``."""
    rng = np.random.default_rng(seed)
    keep, hold = [], []
    for lab in (FARTHER, SIMILAR, CLOSER):
        group = [t for t in triplets if t.label == lab]
        idx = rng.permutation(len(group))
        n_hold = int(round(holdout_fraction * len(group)))
        hold.extend(group[i] for i in idx[:n_hold])
        keep.extend(group[i] for i in idx[n_hold:])
    return keep, hold


def apply_mask(view, rho, rng):
    """Drop each connected object of a multi-hot row (or row batch) with probability ``rho``."""
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    view = np.asarray(view, dtype=float)
    if rho == 0:
        return view.copy()
    return np.where(rng.random(view.shape) < rho, 0.0, view)


class Adam:
    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params, grads, state, cfg):
    """Functional wrapper: ``state`` is an :class:`Adam` instance built from ``cfg``."""
    state.step(params, grads)
    return params


@dataclass
class TrainConfig:
    batch_size: int = 200
    learning_rate: float = 0.01
    epochs: int = 50
    K: int = 8
    alpha: float = 0.1
    rho: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    d_e: int = 32
    d_h: int = 32
    d_a: int = 16
    d_r: int = 16
    triplets_per_label: int = 1000
    test_triplets_per_label: int = 500
    validation_fraction: float = 0.1
    sparse_delta: float = 1.0
    infomap_trials: int = 3
    use_rcr: bool = True
    use_dtr: bool = True
    use_nf: bool = True
    use_cf: bool = True
    gate_bias_init: float = 0.0

    def __post_init__(self):
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        for name in ("batch_size", "epochs", "K", "d_e", "d_h", "d_a", "d_r", "triplets_per_label"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0 or self.alpha < 0:
            raise ValueError("learning_rate and alpha must be non-negative")
        if not 0 < self.sparse_delta <= 1:
            raise ValueError("sparse_delta must lie in (0, 1]")

    def model_config(self, num_main_objects, num_sparse_objects, C_raw):
        return ModelConfig(num_main_objects=num_main_objects, num_sparse_objects=num_sparse_objects,
                           C_raw=C_raw, K=self.K, d_e=self.d_e, d_h=self.d_h, d_a=self.d_a,
                           d_r=self.d_r, alpha=self.alpha, use_rcr=self.use_rcr,
                           use_dtr=self.use_dtr, use_nf=self.use_nf, use_cf=self.use_cf,
                           gate_bias_init=self.gate_bias_init)


@dataclass
class TrainResult:
    model: PccdModel
    loss_curve: list
    validation_accuracy: list = field(default_factory=list)


def _seeds(seed):
    """Independent streams for (init, shuffling, masking)."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(3)]


def batch_inputs(features, triplets):
    users = [t.i for t in triplets] + [t.j for t in triplets] + [t.k for t in triplets]
    return features.inputs(users)


def train(features, triplets, cfg, validation=()):
    """Fit a model on labelled mutual-user triplets.

    ``features`` is a :class:`FeatureView` over the main graph and the sparse
    training view.  Each batch runs forward (masking the main side), backward,
    the memory update, then one Adam step.
    """
    if not triplets:
        raise TrainingError("no training triplets")
    init_seed, order_seed, mask_seed = _seeds(cfg.seed)
    mcfg = cfg.model_config(features.main.num_objects, features.sparse.num_objects, features.num_raw)
    model = PccdModel.create(mcfg, init_seed, features.object_community)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    order_rng = np.random.default_rng(order_seed)
    mask_rng = np.random.default_rng(mask_seed)
    y_all = np.array([t.y for t in triplets])
    curve, val_acc = [], []
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(triplets))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [triplets[i] for i in idx]
            P, Vc = batch_inputs(features, batch)
            P["M"] = apply_mask(P["M"], cfg.rho, mask_rng)
            tr = model.forward(P, Vc, y_all[idx], train=True)
            if not np.isfinite(tr["loss"]):
                raise TrainingError(f"non-finite loss {tr['loss']} at epoch {epoch}, batch starting {start}")
            grads = model.backward(tr)
            model.commit(tr)
            opt.step(model.params, grads)
            total += tr["loss"] * len(idx)
            count += len(idx)
        curve.append((epoch, total / count))
        if validation:
            val_acc.append(accuracy(model, features, validation))
        log.debug("epoch %d loss %.5f", epoch, curve[-1][1])
    return TrainResult(model, curve, val_acc)


def predict_scores(model, features, triplets, chunk=2000):
    out = []
    for start in range(0, len(triplets), chunk):
        P, Vc = batch_inputs(features, triplets[start:start + chunk])
        out.append(model.predict(P, Vc))
    return np.concatenate(out) if out else np.zeros(0)


def accuracy(model, features, triplets):
    from .model import classify_score

    scores = predict_scores(model, features, triplets)
    return float(np.mean([classify_score(s) == t.label for s, t in zip(scores, triplets)]))


@dataclass
class Experiment:
    """Everything derived from a dataset before training: views, raw partition, triplet sets."""

    dataset: object
    sparse_view: object
    raw_partition: object
    features: FeatureView
    truth: dict
    train_labels: dict
    train_triplets: list
    validation_triplets: list
    test_triplets: list


def prepare_experiment(dataset, truth, cfg):
    """Build views and triplet sets.

    With planted ``truth`` both training and test labels come from it; without
    it, training pseudo-labels come from map-equation communities of the
    sparse training view and test labels from those of the full sparse graph.
    Only mutual users enter training and test triplets.
    """
    sparse_view = sparsify(dataset.sparse, cfg.sparse_delta, cfg.seed)
    raw = detect_communities(dataset.main, seed=cfg.seed, trials=cfg.infomap_trials)
    features = FeatureView.from_partition(dataset.main, sparse_view, raw)
    if truth is None:
        full = detect_communities(dataset.sparse, seed=cfg.seed, trials=cfg.infomap_trials)
        truth = {u: full.user_community(u) for u in dataset.sparse.user_ids}
        view = detect_communities(sparse_view, seed=cfg.seed, trials=cfg.infomap_trials)
        train_labels = {u: view.user_community(u) for u in sparse_view.user_ids}
    else:
        train_labels = truth
    mutual = [u for u in dataset.users_of_type(MU) if u in truth and u in train_labels]
    labelled = sample_triplets(mutual, train_labels, cfg.triplets_per_label, cfg.seed)
    train_set, val_set = split_triplets(labelled, cfg.validation_fraction, cfg.seed)
    test = sample_triplets(mutual, truth, cfg.test_triplets_per_label, cfg.seed + 1,
                           exclude={(t.i, t.j, t.k) for t in labelled})
    return Experiment(dataset, sparse_view, raw, features, truth, train_labels, train_set, val_set, test)
