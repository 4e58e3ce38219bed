from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from pccd.model import CLOSER, FARTHER, SIMILAR
from pccd.synthetic import PlantConfig, plant_synthetic_dataset
from pccd.training import (Adam, TrainConfig, TrainingError, apply_mask, label_triplet, prepare_experiment,
                           sample_triplets, split_triplets, train)

TRUTH = {"a": "A", "b": "A", "c": "B", "d": "B", "e": "A"}


def test_label_mapping():
    t = label_triplet("a", "b", "c", TRUTH)
    assert (t.s_jk, t.y, t.label) == (1, 1.0, CLOSER)
    t = label_triplet("a", "c", "b", TRUTH)
    assert (t.s_jk, t.y, t.label) == (-1, 0.0, FARTHER)
    t = label_triplet("a", "b", "e", TRUTH)
    assert (t.s_jk, t.y, t.label) == (0, 0.5, SIMILAR)
    assert label_triplet("a", "c", "d", TRUTH).label == SIMILAR


def test_label_errors():
    with pytest.raises(ValueError):
        label_triplet("a", "a", "b", TRUTH)
    with pytest.raises(KeyError, match="zz"):
        label_triplet("a", "b", "zz", TRUTH)


def planted_truth(n=60, C=3):
    return {f"u{i}": f"c{i % C}" for i in range(n)}


def test_sample_counts_and_labels():
    truth = planted_truth()
    ts = sample_triplets(list(truth), truth, 100, seed=0)
    assert len(ts) == 300
    assert Counter(t.label for t in ts) == {CLOSER: 100, FARTHER: 100, SIMILAR: 100}
    assert len({(t.i, t.j, t.k) for t in ts}) == 300
    assert all(label_triplet(t.i, t.j, t.k, truth) == t for t in ts)


def test_sample_deterministic_and_exclusion():
    truth = planted_truth()
    a = sample_triplets(list(truth), truth, 50, seed=3)
    assert a == sample_triplets(list(truth), truth, 50, seed=3)
    b = sample_triplets(list(truth), truth, 50, seed=4, exclude={(t.i, t.j, t.k) for t in a})
    assert not {(t.i, t.j, t.k) for t in a} & {(t.i, t.j, t.k) for t in b}


def test_single_community_infeasible():
    truth = {f"u{i}": "A" for i in range(10)}
    with pytest.raises(ValueError, match="closer"):
        sample_triplets(list(truth), truth, 1, seed=0)


def test_split_is_stratified():
    truth = planted_truth()
    ts = sample_triplets(list(truth), truth, 100, seed=0)
    keep, hold = split_triplets(ts, 0.1, seed=0)
    assert Counter(t.label for t in hold) == {CLOSER: 10, FARTHER: 10, SIMILAR: 10}
    assert set(keep) | set(hold) == set(ts) and not set(keep) & set(hold)


def test_mask_identity_and_empty():
    rng = np.random.default_rng(0)
    view = (rng.random((20, 30)) < 0.5) * 1.0
    assert np.array_equal(apply_mask(view, 0.0, rng), view)
    assert not apply_mask(view, 1.0, rng).any()
    with pytest.raises(ValueError):
        apply_mask(view, 1.5, rng)


def test_mask_half_drops_half():
    rng = np.random.default_rng(1)
    view = np.ones((200, 500))
    kept = apply_mask(view, 0.5, rng).mean()
    assert kept == pytest.approx(0.5, abs=0.01)
    assert set(np.unique(apply_mask(view * 2.0, 0.5, rng))) <= {0.0, 2.0}


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    Adam(lr=0.1).step(params, {"w": np.array([3.0, -0.01, 0.0])})
    assert np.allclose(params["w"], [0.9, -1.9, 0.5], atol=1e-6)


def test_adam_zero_lr_and_zero_grad():
    params = {"w": np.array([1.0, 2.0])}
    Adam(lr=0.0).step(params, {"w": np.array([1.0, 1.0])})
    assert params["w"].tolist() == [1.0, 2.0]
    Adam(lr=0.1).step(params, {"w": np.zeros(2)})
    assert params["w"].tolist() == [1.0, 2.0]


SMALL_PLANT = PlantConfig(num_communities=3, num_mutual=60, num_main_only=12, num_sparse_only=12,
                          main_objects_per_community=8, sparse_objects_per_community=5, p_in=0.4, p_out=0.02)
SMALL_TRAIN = TrainConfig(batch_size=50, epochs=4, K=3, d_e=6, d_h=6, d_a=4, d_r=4, triplets_per_label=100,
                          test_triplets_per_label=50, infomap_trials=1)


@pytest.fixture(scope="module")
def small_experiment():
    dataset, truth = plant_synthetic_dataset(SMALL_PLANT)
    return prepare_experiment(dataset, truth, SMALL_TRAIN)


def test_experiment_triplets_from_mutual_users(small_experiment):
    ex = small_experiment
    mutual = ex.dataset.mutual_users
    for t in ex.train_triplets + ex.validation_triplets + ex.test_triplets:
        assert {t.i, t.j, t.k} <= mutual
    train_keys = {(t.i, t.j, t.k) for t in ex.train_triplets + ex.validation_triplets}
    assert not train_keys & {(t.i, t.j, t.k) for t in ex.test_triplets}
    assert len(ex.train_triplets) == 270 and len(ex.validation_triplets) == 30


def test_zero_lr_leaves_params(small_experiment):
    ex = small_experiment
    cfg = replace(SMALL_TRAIN, learning_rate=0.0, epochs=1)
    result = train(ex.features, ex.train_triplets, cfg)
    from pccd.model import PccdModel
    from pccd.training import _seeds

    fresh = PccdModel.create(result.model.config, _seeds(cfg.seed)[0], ex.features.object_community)
    for name, value in fresh.params.items():
        assert np.array_equal(result.model.params[name], value)


def test_training_deterministic(small_experiment):
    ex = small_experiment
    a = train(ex.features, ex.train_triplets, SMALL_TRAIN)
    b = train(ex.features, ex.train_triplets, SMALL_TRAIN)
    assert a.model.to_json() == b.model.to_json()
    assert a.loss_curve == b.loss_curve


def test_loss_decreases(small_experiment):
    ex = small_experiment
    result = train(ex.features, ex.train_triplets, replace(SMALL_TRAIN, epochs=20))
    losses = [loss for _, loss in result.loss_curve]
    assert losses[-1] < losses[0] - 0.05
    assert all(np.isfinite(losses))


def test_empty_training_set_rejected(small_experiment):
    with pytest.raises(TrainingError):
        train(small_experiment.features, [], SMALL_TRAIN)


@pytest.mark.parametrize("bad", [dict(rho=-0.1), dict(batch_size=0), dict(sparse_delta=0.0), dict(learning_rate=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_pseudo_labels_without_truth():
    dataset, _ = plant_synthetic_dataset(SMALL_PLANT)
    ex = prepare_experiment(dataset, None, replace(SMALL_TRAIN, sparse_delta=0.8))
    assert ex.test_triplets and ex.train_triplets
    assert set(ex.truth) == set(dataset.sparse.user_ids)


def test_adam_identical_grads_identical_updates():
    params = {"a": np.array([1.0, 2.0]), "b": np.array([1.0, 2.0])}
    opt = Adam(lr=0.05)
    for g in ([0.3, -1.0], [0.1, 2.0]):
        opt.step(params, {"a": np.array(g), "b": np.array(g)})
    assert np.array_equal(params["a"], params["b"])
