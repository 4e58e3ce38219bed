import numpy as np

from pccd.model import ModelConfig, PccdModel


def tiny_setup(seed=0, B=20, alpha=0.1, **overrides):
    """A small random model with a batch of ``B`` triplets (``3B`` user rows)."""
    rng = np.random.default_rng(seed)
    kw = dict(num_main_objects=7, num_sparse_objects=5, C_raw=3, K=3, d_e=4, d_h=4, d_a=3, d_r=3, alpha=alpha)
    kw.update(overrides)
    cfg = ModelConfig(**kw)
    model = PccdModel.create(cfg, seed, object_community=rng.integers(0, cfg.C_raw, cfg.num_main_objects))
    N = 3 * B
    P = {"M": (rng.random((N, cfg.num_main_objects)) < 0.4) * 1.0,
         "S": (rng.random((N, cfg.num_sparse_objects)) < 0.3) * 1.0}
    Vc = np.eye(cfg.C_raw)[rng.integers(0, cfg.C_raw, N)]
    y = rng.choice([0.0, 0.5, 1.0], B)
    return model, P, Vc, y


def max_relative_error(analytic, numeric, floor=1e-8):
    """Element-wise ``|a - n| / max(|a|, |n|, floor)``, maximised."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def gradient_errors(model, P, Vc, y, h=1e-5):
    from oracles import numeric_grad

    grads = model.backward(model.forward(P, Vc, y))
    loss = lambda: model.forward(P, Vc, y)["loss"]  # noqa: E731
    return {name: max_relative_error(grads[name], numeric_grad(loss, value, h))
            for name, value in model.params.items()}
