"""Two-level map equation on undirected weighted graphs.

Users and objects of a bipartite graph form one node set: node ``u`` is user
``u`` and node ``num_users + o`` is object ``o``.  Flow is the stationary
distribution of an undirected random walk without teleportation, so each node
visits with ``strength / (2 * total_weight)`` and every link carries
``weight / (2 * total_weight)`` in each direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_IMPROVE_TOL = 1e-12


def plogp(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out if out.ndim else float(out)


def entropy(p):
    p = np.asarray(p, dtype=float)
    s = p.sum()
    if s <= 0:
        return 0.0
    return float(-plogp(p / s).sum())


@dataclass
class WeightedGraph:
    """Symmetric edge list over ``n`` nodes, each undirected edge stored once."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    labels: tuple = ()

    @classmethod
    def from_edges(cls, n, edges, labels=()):
        acc: dict = {}
        for a, b, *w in edges:
            a, b = (a, b) if a <= b else (b, a)
            acc[(a, b)] = acc.get((a, b), 0.0) + (float(w[0]) if w else 1.0)
        keys = sorted(acc)
        return cls(n,
                   np.array([k[0] for k in keys], dtype=int),
                   np.array([k[1] for k in keys], dtype=int),
                   np.array([acc[k] for k in keys], dtype=float),
                   tuple(labels))

    @classmethod
    def from_bipartite(cls, graph):
        nu = graph.num_users
        labels = tuple(("user", u) for u in graph.user_ids) + tuple(("object", o) for o in graph.object_ids)
        edges = [(u, nu + o, w) for u, o, w in graph.links]
        return cls.from_edges(nu + graph.num_objects, edges, labels)

    def strength(self):
        s = np.zeros(self.n)
        np.add.at(s, self.src, self.weight)
        np.add.at(s, self.dst, self.weight)
        return s

    def adjacency_lists(self):
        adj = [dict() for _ in range(self.n)]
        for a, b, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            if a != b:
                adj[a][b] = adj[a].get(b, 0.0) + w
                adj[b][a] = adj[b].get(a, 0.0) + w
        return adj


def _as_weighted(graph):
    return graph if isinstance(graph, WeightedGraph) else WeightedGraph.from_bipartite(graph)


@dataclass(frozen=True)
class FlowStats:
    visit_rate: np.ndarray
    exit_rate: np.ndarray
    within_rate: np.ndarray
    index_entropy: float
    module_entropy: np.ndarray
    index_codelength: float
    module_codelength: float

    @property
    def codelength(self):
        return self.index_codelength + self.module_codelength


@dataclass(frozen=True)
class CommunityPartition:
    """Hard assignment of every node to a community ``0..C-1``."""

    assignment: tuple
    num_communities: int
    codelength: float
    labels: tuple = ()

    def __post_init__(self):
        used = set(self.assignment)
        if used != set(range(self.num_communities)):
            raise ValueError("community ids must be contiguous and non-empty")

    @classmethod
    def from_assignment(cls, assignment, codelength=float("nan"), labels=()):
        return cls(*_relabel(assignment), codelength, tuple(labels))

    def community_of(self, label):
        if not hasattr(self, "_lookup"):
            object.__setattr__(self, "_lookup", {lab: i for i, lab in enumerate(self.labels)})
        idx = self._lookup.get(label)
        return None if idx is None else self.assignment[idx]

    def user_community(self, user_id):
        return self.community_of(("user", user_id))

    def object_community(self, object_id):
        return self.community_of(("object", object_id))


def _relabel(assignment):
    """Map community ids to 0..C-1 by first appearance."""
    remap: dict = {}
    out = tuple(remap.setdefault(c, len(remap)) for c in assignment)
    return out, len(remap)


def stationary_visit_rates(graph):
    g = _as_weighted(graph)
    total = float(g.weight.sum())
    if total <= 0:
        raise ValueError("graph has no links")
    return g.strength() / (2.0 * total)


def power_iteration_visit_rates(graph, tol=1e-12, max_iter=100000):
    """Fixed point of the lazy walk started from the strength-weighted component mass.

    Independent route to the closed form: each component is iterated separately
    and weighted by its share of total link weight.
    """
    g = _as_weighted(graph)
    total = float(g.weight.sum())
    if total <= 0:
        raise ValueError("graph has no links")
    W = np.zeros((g.n, g.n))
    np.add.at(W, (g.src, g.dst), g.weight)
    np.add.at(W, (g.dst, g.src), g.weight)
    strength = W.sum(axis=1)
    out = np.zeros(g.n)
    for comp in _components(g):
        comp = np.array(comp)
        if strength[comp].sum() == 0:
            continue
        sub = W[np.ix_(comp, comp)]
        T = sub / sub.sum(axis=1, keepdims=True)
        T = 0.5 * (np.eye(len(comp)) + T)  # lazy walk: aperiodic on bipartite graphs
        p = np.full(len(comp), 1.0 / len(comp))
        for _ in range(max_iter):
            nxt = p @ T
            if np.abs(nxt - p).sum() < tol:
                p = nxt
                break
            p = nxt
        out[comp] = p * strength[comp].sum() / strength.sum()
    return out


def _components(g):
    adj = g.adjacency_lists()
    seen = [False] * g.n
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        seen[s] = True
        stack, comp = [s], []
        while stack:
            a = stack.pop()
            comp.append(a)
            for b in adj[a]:
                if not seen[b]:
                    seen[b] = True
                    stack.append(b)
        comps.append(sorted(comp))
    return comps


def flow_stats(graph, assignment):
    g = _as_weighted(graph)
    assignment = np.asarray(assignment, dtype=int)
    if len(assignment) != g.n:
        raise ValueError(f"partition covers {len(assignment)} nodes, graph has {g.n}")
    visit = stationary_visit_rates(g)
    total = float(g.weight.sum())
    C = int(assignment.max()) + 1
    exit_rate = np.zeros(C)
    cross = assignment[g.src] != assignment[g.dst]
    flow = g.weight / (2.0 * total)
    np.add.at(exit_rate, assignment[g.src[cross]], flow[cross])
    np.add.at(exit_rate, assignment[g.dst[cross]], flow[cross])
    member = np.zeros(C)
    np.add.at(member, assignment, visit)
    within = exit_rate + member
    q = exit_rate.sum()
    h_index = entropy(exit_rate)
    h_module = np.zeros(C)
    for i in range(C):
        h_module[i] = entropy(np.concatenate([[exit_rate[i]], visit[assignment == i]]))
    return FlowStats(visit, exit_rate, within, h_index, h_module,
                     float(q * h_index), float((within * h_module).sum()))


def codelength(graph, partition):
    """Two-level map equation in bits for ``partition`` (a CommunityPartition or id sequence)."""
    assignment = partition.assignment if isinstance(partition, CommunityPartition) else partition
    assignment, _ = _relabel(list(assignment))
    return flow_stats(graph, assignment).codelength


class _Level:
    """Optimisation state over (possibly aggregated) nodes.

    Uses the expanded form
    ``L = plogp(sum q) - 2 sum plogp(q_i) - sum_a plogp(p_a) + sum plogp(q_i + p_i)``
    where the node term runs over original nodes and stays constant.
    """

    def __init__(self, flow, exit_flow, adj, node_term):
        self.flow = flow
        self.exit_flow = exit_flow
        self.adj = adj
        self.node_term = node_term
        n = len(flow)
        self.module = list(range(n))
        self.mod_flow = list(flow)
        self.mod_exit = list(exit_flow)
        self.mod_size = [1] * n
        self.sum_exit = float(sum(exit_flow))
        self.sum_plogp_exit = float(sum(plogp(q) for q in exit_flow))
        self.sum_plogp_tot = float(sum(plogp(q + p) for q, p in zip(exit_flow, flow)))

    def set_modules(self, assignment):
        ids, C = _relabel(assignment)
        n = len(self.flow)
        self.module = list(ids)
        self.mod_flow = [0.0] * n
        self.mod_exit = [0.0] * n
        self.mod_size = [0] * n
        for a, m in enumerate(ids):
            self.mod_flow[m] += self.flow[a]
            self.mod_size[m] += 1
            self.mod_exit[m] += sum(f for b, f in self.adj[a].items() if ids[b] != m)
        self.sum_exit = float(sum(self.mod_exit))
        self.sum_plogp_exit = float(sum(plogp(q) for q in self.mod_exit))
        self.sum_plogp_tot = float(sum(plogp(q + p) for q, p in zip(self.mod_exit, self.mod_flow)))

    def codelength(self):
        return (plogp(self.sum_exit) - 2.0 * self.sum_plogp_exit
                - self.node_term + self.sum_plogp_tot)

    def _delta(self, a, old, new, f_old, f_new):
        """Codelength change for moving node ``a`` from ``old`` to ``new``.

        ``f_old``/``f_new`` are the one-direction flows between ``a`` and the
        rest of the source / target module.  ``new == -1`` means a fresh module.
        """
        pa, qa = self.flow[a], self.exit_flow[a]
        q_old = self.mod_exit[old]
        p_old = self.mod_flow[old]
        q_old2 = q_old - qa + 2.0 * f_old
        p_old2 = p_old - pa
        if new == -1:
            q_new, p_new = 0.0, 0.0
        else:
            q_new, p_new = self.mod_exit[new], self.mod_flow[new]
        q_new2 = q_new + qa - 2.0 * f_new
        p_new2 = p_new + pa
        sum_exit2 = self.sum_exit - q_old - q_new + q_old2 + q_new2
        d_exit = plogp(q_old2) + plogp(q_new2) - plogp(q_old) - plogp(q_new)
        d_tot = (plogp(q_old2 + p_old2) + plogp(q_new2 + p_new2)
                 - plogp(q_old + p_old) - plogp(q_new + p_new))
        return plogp(sum_exit2) - plogp(self.sum_exit) - 2.0 * d_exit + d_tot

    def _apply(self, a, old, new, f_old, f_new):
        pa, qa = self.flow[a], self.exit_flow[a]
        for m in (old, new):
            self.sum_exit -= self.mod_exit[m]
            self.sum_plogp_exit -= plogp(self.mod_exit[m])
            self.sum_plogp_tot -= plogp(self.mod_exit[m] + self.mod_flow[m])
        self.mod_exit[old] += -qa + 2.0 * f_old
        self.mod_flow[old] -= pa
        self.mod_exit[new] += qa - 2.0 * f_new
        self.mod_flow[new] += pa
        for m in (old, new):
            if self.mod_size[m] + (1 if m == new else -1) == 0:
                # an emptied module must contribute exactly zero
                self.mod_exit[m] = 0.0
                self.mod_flow[m] = 0.0
            self.sum_exit += self.mod_exit[m]
            self.sum_plogp_exit += plogp(self.mod_exit[m])
            self.sum_plogp_tot += plogp(self.mod_exit[m] + self.mod_flow[m])
        self.mod_size[old] -= 1
        self.mod_size[new] += 1
        self.module[a] = new

    def move_nodes(self, rng):
        """Local moving until no node move improves by more than the tolerance."""
        n = len(self.flow)
        moved_any = False
        while True:
            moved = 0
            for a in rng.permutation(n).tolist():
                old = self.module[a]
                links: dict = {}
                for b, f in self.adj[a].items():
                    m = self.module[b]
                    links[m] = links.get(m, 0.0) + f
                f_old = links.get(old, 0.0)
                best_delta, best_mod, best_f = 0.0, old, f_old
                candidates = sorted(m for m in links if m != old)
                if self.mod_size[old] > 1:
                    candidates.append(-1)
                for m in candidates:
                    f_new = links.get(m, 0.0) if m != -1 else 0.0
                    d = self._delta(a, old, m, f_old, f_new)
                    if d < best_delta - _IMPROVE_TOL:
                        best_delta, best_mod, best_f = d, m, f_new
                if best_mod != old:
                    if best_mod == -1:
                        best_mod = self.mod_size.index(0)
                    self._apply(a, old, best_mod, f_old, best_f)
                    moved += 1
            if not moved:
                return moved_any
            moved_any = True


def _aggregate(flow, exit_flow, adj, module):
    ids, C = _relabel(module)
    new_flow = [0.0] * C
    new_adj = [dict() for _ in range(C)]
    for a, m in enumerate(ids):
        new_flow[m] += flow[a]
        for b, f in adj[a].items():
            mb = ids[b]
            if mb != m:
                new_adj[m][mb] = new_adj[m].get(mb, 0.0) + f
    # adj stores each undirected edge from both endpoints, so summing over
    # neighbours of the module gives its one-direction exit flow exactly
    new_exit = [sum(d.values()) for d in new_adj]
    return new_flow, new_exit, new_adj, ids


def _optimise(flow, exit_flow, adj, node_term, rng):
    """Louvain-style loop: local moves, aggregate, repeat.  Returns node->module list."""
    mapping = list(range(len(flow)))
    level = _Level(flow, exit_flow, adj, node_term)
    while True:
        moved = level.move_nodes(rng)
        lf, le, la, ids = _aggregate(level.flow, level.exit_flow, level.adj, level.module)
        mapping = [ids[m] for m in mapping]
        if not moved or len(lf) == len(level.flow):
            return mapping
        level = _Level(lf, le, la, node_term)


def detect_communities(graph, seed=0, trials=5):
    """Greedy two-level map-equation minimisation.

    Each trial runs local moving plus aggregation from singletons, then tunes
    the result by re-running local moves on the original nodes.  The best
    trial wins; the all-singleton and one-module partitions are also checked
    so the result never scores worse than either.
    """
    g = _as_weighted(graph)
    total = float(g.weight.sum())
    if total <= 0:
        raise ValueError("graph has no links")
    visit = stationary_visit_rates(g)
    adj_w = g.adjacency_lists()
    adj = [{b: w / (2.0 * total) for b, w in d.items()} for d in adj_w]
    exit_flow = [sum(d.values()) for d in adj]
    flow = visit.tolist()
    node_term = float(plogp(visit).sum())

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, trials)):
        assignment = list(_relabel(_optimise(flow, exit_flow, adj, node_term, rng))[0])
        for _ in range(10):
            tuned = _tune(flow, exit_flow, adj, node_term, rng, assignment)
            if tuned == assignment:
                break
            assignment = tuned
        L = codelength(g, assignment)
        if best is None or L < best[1] - _IMPROVE_TOL:
            best = (assignment, L)
    for fallback in (list(range(g.n)), [0] * g.n):
        L = codelength(g, fallback)
        if L < best[1] - _IMPROVE_TOL:
            best = (fallback, L)
    assignment, C = _relabel(best[0])
    return CommunityPartition(assignment, C, codelength(g, assignment), g.labels)


def _tune(flow, exit_flow, adj, node_term, rng, assignment):
    """Re-run local moves on original nodes from ``assignment``, then re-aggregate."""
    level = _Level(flow, exit_flow, adj, node_term)
    level.set_modules(assignment)
    level.move_nodes(rng)
    lf, le, la, agg = _aggregate(flow, exit_flow, adj, level.module)
    sub = _optimise(lf, le, la, node_term, rng)
    return list(_relabel([sub[agg[a]] for a in range(len(flow))])[0])


def raw_one_hot(partition, user_id, dim):
    if dim < partition.num_communities:
        raise ValueError(f"dim {dim} smaller than {partition.num_communities} communities")
    out = np.zeros(dim)
    c = partition.user_community(user_id)
    if c is not None:
        out[c] = 1.0
    return out


def write_partition(partition, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# codelength_bits\t{partition.codelength:.6f}\n")
        for (kind, node), c in zip(partition.labels, partition.assignment):
            fh.write(f"{kind}:{node}\t{c}\n")
