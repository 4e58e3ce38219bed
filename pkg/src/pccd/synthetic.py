"""Planted-community cross-graph generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import BipartiteGraph, build_cross_dataset


@dataclass
class PlantConfig:
    num_communities: int = 6
    num_mutual: int = 300
    num_main_only: int = 60
    num_sparse_only: int = 60
    main_objects_per_community: int = 20
    sparse_objects_per_community: int = 10
    p_in: float = 0.3
    p_out: float = 0.01
    # Per-graph overrides; None falls back to p_in / p_out.
    main_p_in: float | None = None
    main_p_out: float | None = None
    sparse_p_in: float | None = None
    sparse_p_out: float | None = None
    # Community-agnostic "popular" objects linked by any user with p_noise.
    main_noise_objects: int = 0
    sparse_noise_objects: int = 0
    p_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_communities < 1:
            raise ValueError("num_communities must be >= 1")
        for name in ("num_mutual", "num_main_only", "num_sparse_only",
                     "main_objects_per_community", "sparse_objects_per_community",
                     "main_noise_objects", "sparse_noise_objects"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for g in ("main", "sparse"):
            p_in, p_out = self.probs(g)
            if not 0 <= p_out <= p_in <= 1:
                raise ValueError(f"{g}: need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
        if not 0 <= self.p_noise <= 1:
            raise ValueError("p_noise must lie in [0, 1]")

    def probs(self, graph):
        p_in = getattr(self, f"{graph}_p_in")
        p_out = getattr(self, f"{graph}_p_out")
        return (self.p_in if p_in is None else p_in, self.p_out if p_out is None else p_out)


def _draw_graph(rng, users, user_comm, C, per_comm, n_noise, p_in, p_out, p_noise, prefix, tag):
    objects = [f"{prefix}{c}_{j}" for c in range(C) for j in range(per_comm)]
    obj_comm = np.repeat(np.arange(C), per_comm)
    objects += [f"{prefix}noise_{j}" for j in range(n_noise)]
    comm = np.asarray([user_comm[u] for u in users])
    prob = np.where(comm[:, None] == obj_comm[None, :], p_in, p_out)
    if n_noise:
        prob = np.concatenate([prob, np.full((len(users), n_noise), p_noise)], axis=1)
    hit = rng.random(prob.shape) < prob
    links = tuple((int(u), int(o), 1.0) for u, o in zip(*np.nonzero(hit)))
    return BipartiteGraph(tuple(users), tuple(objects), links, tag)


def plant_synthetic_dataset(cfg):
    """Returns ``(CrossGraphDataset, truth)`` where truth maps user id -> community label.

    Every user's community is shared by both graphs; users of a graph stay in
    its id space even if they drew no links.
    """
    rng = np.random.default_rng(cfg.seed)
    C = cfg.num_communities
    mutual = [f"mu{i:04d}" for i in range(cfg.num_mutual)]
    main_only = [f"mo{i:04d}" for i in range(cfg.num_main_only)]
    sparse_only = [f"so{i:04d}" for i in range(cfg.num_sparse_only)]
    truth = {}
    for group in (mutual, main_only, sparse_only):
        comms = rng.permutation(np.arange(len(group)) % C)
        truth.update({u: f"c{int(c)}" for u, c in zip(group, comms)})
    user_comm = {u: int(c[1:]) for u, c in truth.items()}

    main = _draw_graph(rng, mutual + main_only, user_comm, C, cfg.main_objects_per_community,
                       cfg.main_noise_objects, *cfg.probs("main"), cfg.p_noise, "m", "main")
    sparse = _draw_graph(rng, mutual + sparse_only, user_comm, C, cfg.sparse_objects_per_community,
                         cfg.sparse_noise_objects, *cfg.probs("sparse"), cfg.p_noise, "s", "sparse")
    if main.num_links == 0 or sparse.num_links == 0:
        raise ValueError("plant configuration produced a graph without links")
    return build_cross_dataset(main, sparse), truth
