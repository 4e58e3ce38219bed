"""Bipartite user-object graphs, edge-list IO and cross-graph assembly."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MU, MO, SO = "MU", "MO", "SO"


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class BipartiteGraph:
    """Immutable weighted bipartite graph.

    ``links`` holds ``(user_index, object_index, weight)`` triples with no
    duplicate ``(user, object)`` pair.  Index order follows first appearance.
    """

    user_ids: tuple
    object_ids: tuple
    links: tuple
    domain_tag: str = ""
    _user_index: dict = field(default=None, repr=False, compare=False)
    _object_index: dict = field(default=None, repr=False, compare=False)
    _adjacency: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        uidx = {u: i for i, u in enumerate(self.user_ids)}
        oidx = {o: i for i, o in enumerate(self.object_ids)}
        if len(uidx) != len(self.user_ids) or len(oidx) != len(self.object_ids):
            raise GraphFormatError("duplicate user or object id")
        adj: dict[int, list] = {}
        seen = set()
        for u, o, w in self.links:
            if not (0 <= u < len(self.user_ids) and 0 <= o < len(self.object_ids)):
                raise GraphFormatError(f"link ({u}, {o}) out of range")
            if not w > 0:
                raise GraphFormatError(f"non-positive weight {w} on link ({u}, {o})")
            if (u, o) in seen:
                raise GraphFormatError(f"duplicate link ({u}, {o})")
            seen.add((u, o))
            adj.setdefault(u, []).append((o, float(w)))
        object.__setattr__(self, "_user_index", uidx)
        object.__setattr__(self, "_object_index", oidx)
        object.__setattr__(self, "_adjacency", adj)

    @classmethod
    def from_pairs(cls, pairs, domain_tag=""):
        """Build from ``(user_id, object_id[, weight])`` tuples, summing repeats."""
        users: dict = {}
        objects: dict = {}
        weights: dict = {}
        for p in pairs:
            u, o = p[0], p[1]
            w = float(p[2]) if len(p) > 2 else 1.0
            if not w > 0:
                raise GraphFormatError(f"non-positive weight {w}")
            ui = users.setdefault(u, len(users))
            oi = objects.setdefault(o, len(objects))
            weights[(ui, oi)] = weights.get((ui, oi), 0.0) + w
        links = tuple((u, o, w) for (u, o), w in sorted(weights.items()))
        return cls(tuple(users), tuple(objects), links, domain_tag)

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_objects(self):
        return len(self.object_ids)

    @property
    def num_links(self):
        return len(self.links)

    def user_index(self, user_id):
        return self._user_index.get(user_id)

    def object_index(self, object_id):
        return self._object_index.get(object_id)

    def has_user(self, user_id):
        return user_id in self._user_index

    def neighbors(self, user_index):
        return self._adjacency.get(user_index, [])

    def total_weight(self):
        return float(sum(w for _, _, w in self.links))

    def with_links(self, links, domain_tag=None):
        return BipartiteGraph(self.user_ids, self.object_ids, tuple(links),
                              self.domain_tag if domain_tag is None else domain_tag)


def load_edge_list(path, domain_tag=""):
    """Read a tab-separated ``user<TAB>object[<TAB>weight]`` file."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise GraphFormatError(f"malformed line at line {lineno}: {line!r}")
            w = 1.0
            if len(parts) == 3:
                try:
                    w = float(parts[2])
                except ValueError:
                    raise GraphFormatError(f"malformed weight at line {lineno}: {parts[2]!r}") from None
                if not w > 0 or not np.isfinite(w):
                    raise GraphFormatError(f"non-positive weight at line {lineno}")
            pairs.append((parts[0], parts[1], w))
    if not pairs:
        raise GraphFormatError(f"empty edge list: {path}")
    return BipartiteGraph.from_pairs(pairs, domain_tag)


def save_edge_list(graph, path):
    # Isolated users/objects can't be expressed in an edge list; the id order of
    # linked nodes is preserved by emitting links in index order.
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# domain: {graph.domain_tag}\n")
        for u, o, w in sorted(graph.links, key=lambda x: (x[0], x[1])):
            fh.write(f"{graph.user_ids[u]}\t{graph.object_ids[o]}\t{w!r}\n")


@dataclass(frozen=True)
class CrossGraphDataset:
    main: BipartiteGraph
    sparse: BipartiteGraph
    mutual_users: frozenset
    user_type: dict

    def users_of_type(self, kind):
        """Users of one type, in deterministic (main then sparse) order."""
        return [u for u in self.all_users() if self.user_type[u] == kind]

    def all_users(self):
        out = list(self.main.user_ids)
        out.extend(u for u in self.sparse.user_ids if not self.main.has_user(u))
        return out


def build_cross_dataset(main, sparse):
    if main.num_users == 0 or sparse.num_users == 0:
        raise ValueError("both graphs must contain users")
    overlap = set(main.object_ids) & set(sparse.object_ids)
    if overlap:
        raise ValueError(f"object ids shared between graphs: {sorted(overlap)[:5]}")
    mu = set(main.user_ids) & set(sparse.user_ids)
    if not mu:
        log.warning("graphs share no mutual users; training will not be possible")
    types = {}
    for u in main.user_ids:
        types[u] = MU if u in mu else MO
    for u in sparse.user_ids:
        types.setdefault(u, SO)
    return CrossGraphDataset(main, sparse, frozenset(mu), types)


def sparsify(graph, delta, seed):
    """Keep ``round(delta * |links|)`` links chosen uniformly without replacement."""
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    n = graph.num_links
    keep = int(round(delta * n))
    if keep == n:
        return graph.with_links(graph.links)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    return graph.with_links([graph.links[i] for i in chosen])


def multi_hot(graph, user_id):
    """Sorted ``(object_index, weight)`` list; empty for absent or isolated users."""
    ui = graph.user_index(user_id)
    if ui is None:
        return []
    return sorted(graph.neighbors(ui))


def multi_hot_matrix(graph, user_ids):
    """Dense ``len(user_ids) x num_objects`` weight matrix (zero rows for absentees)."""
    out = np.zeros((len(user_ids), graph.num_objects))
    for r, u in enumerate(user_ids):
        for o, w in multi_hot(graph, u):
            out[r, o] = w
    return out


def load_truth(path):
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(f"malformed line at line {lineno}: {line!r}")
            truth[parts[0]] = parts[1]
    return truth


def save_truth(truth, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u, c in truth.items():
            fh.write(f"{u}\t{c}\n")


def load_manifest(path):
    """Load a dataset manifest (JSON) or a directory holding ``manifest.json``.

    Returns ``(dataset, truth_or_None, manifest_dict)``; relative paths resolve
    against the manifest's directory.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    main = load_edge_list(base / manifest["main"], manifest.get("main_tag", "main"))
    sparse = load_edge_list(base / manifest["sparse"], manifest.get("sparse_tag", "sparse"))
    truth = load_truth(base / manifest["truth"]) if manifest.get("truth") else None
    return build_cross_dataset(main, sparse), truth, manifest
