"""PCCD network: propagative user representations, community recurrent unit,
pairwise head, and hand-written gradients.

All per-batch computation is vectorised over the ``3B`` users of ``B``
triplets.  Rows ``0..B-1`` hold the anchors ``i``, ``B..2B-1`` the first
candidates ``j`` and ``2B..3B-1`` the second candidates ``k``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .graph import multi_hot_matrix

CHECKPOINT_FORMAT = "pccd-checkpoint/1"
SIDES = ("M", "S")
LOG_CLAMP = 1e-12

FARTHER, SIMILAR, CLOSER = "farther", "similar", "closer"
LABELS = (FARTHER, SIMILAR, CLOSER)


@dataclass
class ModelConfig:
    num_main_objects: int
    num_sparse_objects: int
    C_raw: int = 1
    K: int = 8
    d_e: int = 32
    d_h: int = 32
    d_a: int = 16
    d_r: int = 16
    alpha: float = 0.1
    batch_norm_epsilon: float = 1e-5
    batch_norm_momentum: float = 0.9
    use_rcr: bool = True
    use_dtr: bool = True
    use_nf: bool = True
    use_cf: bool = True
    # Initial update-gate bias; negative starts the memory gate nearly closed.
    gate_bias_init: float = 0.0

    def __post_init__(self):
        for name in ("num_main_objects", "num_sparse_objects", "C_raw", "K", "d_e", "d_h", "d_a", "d_r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def dim(self, side):
        base = self.d_e + self.d_h
        return base + self.C_raw if side == "M" else base

    def num_objects(self, side):
        return self.num_main_objects if side == "M" else self.num_sparse_objects


def param_shapes(cfg):
    """Parameter names and shapes in checkpoint order."""
    shapes = {}
    for g in SIDES:
        dim, n_obj = cfg.dim(g), cfg.num_objects(g)
        shapes.update({
            f"{g}.W_e": (cfg.d_e, n_obj),
            f"{g}.b_e": (cfg.d_e,),
            f"{g}.H": (n_obj, cfg.d_h),
            f"{g}.W_p": (cfg.d_a, cfg.d_h),
            f"{g}.b_p": (cfg.d_a,),
            f"{g}.u_p": (cfg.d_a,),
        })
        if g == "M":
            shapes["M.w"] = (cfg.C_raw,)
        shapes.update({
            f"{g}.bn_gamma": (dim,),
            f"{g}.bn_beta": (dim,),
            f"{g}.u_c": (dim,),
            f"{g}.W_s": (dim, 2 * dim),
            f"{g}.b_s": (dim,),
            f"{g}.W_z": (dim, dim),
            f"{g}.b_z": (dim,),
            f"{g}.W_r": (cfg.d_r, cfg.K),
            f"{g}.b_r": (cfg.d_r,),
        })
    shapes["W_o"] = (2 * cfg.d_r,)
    shapes["b_o"] = (1,)
    return shapes


def _xavier(rng, shape):
    fan_out, fan_in = (1, shape[0]) if len(shape) == 1 else shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg, seed):
    """Returns ``(params, memory)``; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        short = name.split(".")[-1]
        if short == "b_s":
            params[name] = np.full(shape, float(cfg.gate_bias_init))
        elif short in ("b_e", "b_p", "b_s", "b_z", "b_r", "b_o", "bn_beta"):
            params[name] = np.zeros(shape)
        elif short in ("w", "bn_gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = _xavier(rng, shape)
    memory = {g: _xavier(rng, (cfg.K, cfg.dim(g))) for g in SIDES}
    return params, memory


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def affiliation_scores(v, D, u_c):
    """``c_k = sigmoid(u_c . (tanh(v) * d_k))``; ``v`` may be one vector or a row batch."""
    v = np.asarray(v, dtype=float)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if v.shape[-1] != D.shape[1] or len(u_c) != D.shape[1]:
        raise ValueError(f"dimension mismatch: v {v.shape}, D {D.shape}, u_c {np.shape(u_c)}")
    return sigmoid(np.tanh(v) @ (D * np.asarray(u_c)[None, :]).T)


def _gates(V, D, W_s, b_s, W_z, b_z):
    dim = D.shape[1]
    S = sigmoid((V @ W_s[:, :dim].T)[:, None, :] + (D @ W_s[:, dim:].T)[None, :, :] + b_s)
    Z = np.tanh(V @ W_z.T + b_z)
    return S, Z


def update_memory(V, D, W_s, b_s, W_z, b_z):
    """Gated memory update averaged over the member rows of ``V``.

    Every row yields ``d_j* = (1 - s) * d_j + s * z`` for each community j; the
    new memory is the mean of those candidates over rows.
    """
    V = np.atleast_2d(V)
    S, Z = _gates(V, D, W_s, b_s, W_z, b_z)
    return ((1.0 - S) * D[None] + S * Z[:, None, :]).mean(axis=0)


def _unit_rows(D):
    norms = np.linalg.norm(D, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return D / safe[:, None], norms


def community_constraint(D):
    """Mean pairwise cosine over all ordered pairs (diagonal included), halved."""
    U, _ = _unit_rows(np.asarray(D, dtype=float))
    K = D.shape[0]
    s = U.sum(axis=0)
    return float(s @ s) / (2.0 * K * K)


def community_constraint_grad(D):
    U, norms = _unit_rows(D)
    K = D.shape[0]
    s = U.sum(axis=0)
    proj = s[None, :] - U * (U @ s)[:, None]
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms[:, None] > 0, proj / safe[:, None], 0.0) / (K * K)


def pairwise_forward(c, W_r, b_r, W_o, b_o):
    """Head over per-side affiliation triples.

    ``c`` maps side -> ``(c_i, c_j, c_k)`` arrays (vectors or row batches).
    Returns ``(y_hat, logit)``.
    """
    r_ij = np.tanh(np.concatenate([(np.asarray(c[g][0]) - c[g][1]) @ np.asarray(W_r[g]).T + b_r[g] for g in ("S", "M")], axis=-1))
    r_ik = np.tanh(np.concatenate([(np.asarray(c[g][0]) - c[g][2]) @ np.asarray(W_r[g]).T + b_r[g] for g in ("S", "M")], axis=-1))
    logit = (r_ij - r_ik) @ W_o + np.asarray(b_o).reshape(-1)[0]
    return sigmoid(logit), logit


def cross_entropy(y_hat, y):
    p = np.clip(y_hat, LOG_CLAMP, 1.0 - LOG_CLAMP)
    return -y * np.log(p) - (1.0 - y) * np.log(1.0 - p)


def total_loss(y_hat, y, lc_sparse, lc_main, alpha):
    return float(np.mean(cross_entropy(np.asarray(y_hat), np.asarray(y)))) + alpha * (lc_sparse + lc_main)


def classify_score(y_hat):
    if y_hat < 1.0 / 3.0:
        return FARTHER
    if y_hat < 2.0 / 3.0:
        return SIMILAR
    return CLOSER


class FeatureView:
    """Per-user model inputs: multi-hot rows on both sides and the raw community id on M.

    ``object_community`` gives the raw community of every main-graph object and
    ``user_community`` maps user ids to their raw main-graph community.
    """

    def __init__(self, main, sparse, object_community, user_community, num_raw):
        self.main = main
        self.sparse = sparse
        self.object_community = np.asarray(object_community, dtype=int)
        self.user_community = dict(user_community)
        self.num_raw = num_raw
        users = list(main.user_ids) + [u for u in sparse.user_ids if not main.has_user(u)]
        self.users = users
        self.row = {u: i for i, u in enumerate(users)}
        self.P = {"M": multi_hot_matrix(main, users), "S": multi_hot_matrix(sparse, users)}
        vc = np.zeros((len(users), num_raw))
        for u, i in self.row.items():
            c = self.user_community.get(u)
            if c is not None:
                vc[i, c] = 1.0
        self.Vc = vc

    @classmethod
    def from_partition(cls, main, sparse, partition):
        obj = [partition.object_community(o) for o in main.object_ids]
        users = {u: partition.user_community(u) for u in main.user_ids}
        return cls(main, sparse, obj, {u: c for u, c in users.items() if c is not None},
                   partition.num_communities)

    def rows(self, user_ids):
        try:
            return np.array([self.row[u] for u in user_ids], dtype=int)
        except KeyError as exc:
            raise KeyError(f"unknown user {exc.args[0]!r}") from None

    def inputs(self, user_ids):
        idx = self.rows(user_ids)
        return {"M": self.P["M"][idx], "S": self.P["S"][idx]}, self.Vc[idx]


class PccdModel:
    """Parameters, community memory and batch-norm running statistics."""

    def __init__(self, config, params, memory, bn_running=None, object_community=None):
        self.config = config
        self.params = params
        self.memory = memory
        if bn_running is None:
            bn_running = {g: {"mean": np.zeros(config.dim(g)), "var": np.ones(config.dim(g))} for g in SIDES}
        self.bn_running = bn_running
        if object_community is None:
            object_community = np.zeros(config.num_main_objects, dtype=int)
        self.object_community = np.asarray(object_community, dtype=int)

    @classmethod
    def create(cls, config, seed, object_community=None):
        params, memory = init_params(config, seed)
        return cls(config, params, memory, object_community=object_community)

    # ------------------------------------------------------------------ forward
    def _side(self, g, P, Vc, train, keep=None):
        """Propagative representation ``v`` for one graph side.  Returns ``(V, cache)``."""
        cfg, p = self.config, self.params
        if keep is not None:
            P = P * keep
        N = P.shape[0]
        if cfg.use_dtr:
            Ve = np.tanh(P @ p[f"{g}.W_e"].T + p[f"{g}.b_e"])
        else:
            Ve = np.zeros((N, cfg.d_e))
        H = p[f"{g}.H"]
        Ua = np.tanh(H @ p[f"{g}.W_p"].T + p[f"{g}.b_p"])
        a = Ua @ p[f"{g}.u_p"]
        w_obj = None
        if not cfg.use_nf:
            e = np.zeros(H.shape[0])  # uniform weights over the neighbourhood
        elif g == "M":
            w_obj = p["M.w"][self.object_community] if cfg.use_cf else np.ones(H.shape[0])
            e = a * w_obj
        else:
            e = a
        nbr = P > 0
        logits = np.where(nbr, e[None, :], -np.inf)
        rowmax = logits.max(axis=1, keepdims=True)
        rowmax[~np.isfinite(rowmax)] = 0.0
        ex = np.where(nbr, np.exp(logits - rowmax), 0.0)
        tot = ex.sum(axis=1, keepdims=True)
        att = ex / np.where(tot > 0, tot, 1.0)
        Vp = att @ H
        parts = [Ve, Vp]
        if g == "M":
            parts.insert(0, Vc if cfg.use_rcr else np.zeros_like(Vc))
        X = np.concatenate(parts, axis=1)
        gamma, beta = p[f"{g}.bn_gamma"], p[f"{g}.bn_beta"]
        eps = cfg.batch_norm_epsilon
        if train:
            mu, var = X.mean(axis=0), X.var(axis=0)
        else:
            mu, var = self.bn_running[g]["mean"], self.bn_running[g]["var"]
        std = np.sqrt(var + eps)
        Xhat = (X - mu) / std
        V = gamma * Xhat + beta
        cache = dict(P=P, Ve=Ve, Ua=Ua, a=a, w_obj=w_obj, att=att, Xhat=Xhat, std=std,
                     batch_mean=mu, batch_var=var)
        return V, cache

    def represent(self, g, P, Vc, train=False, keep=None):
        return self._side(g, P, Vc, train, keep)[0]

    def forward(self, P, Vc, y, train=True, keep=None):
        """Loss and trace for a batch of ``B`` triplets (``3B`` user rows).

        ``P`` maps side -> multi-hot rows, ``Vc`` holds raw one-hots and
        ``keep`` an optional 0/1 mask applied to the main-side rows.
        """
        cfg, p = self.config, self.params
        y = np.asarray(y, dtype=float)
        B = len(y)
        tr = {"B": B, "y": y, "train": train}
        C = {}
        lc = {}
        for g in SIDES:
            V, cache = self._side(g, P[g], Vc, train, keep if g == "M" else None)
            D = self.memory[g]
            T = np.tanh(V)
            Cg = sigmoid(T @ (D * p[f"{g}.u_c"][None, :]).T)
            S, Z = _gates(V, D, p[f"{g}.W_s"], p[f"{g}.b_s"], p[f"{g}.W_z"], p[f"{g}.b_z"])
            D_new = ((1.0 - S) * D[None] + S * Z[:, None, :]).mean(axis=0)
            lc[g] = community_constraint(D_new)
            cache.update(V=V, T=T, C=Cg, S=S, Z=Z, D=D, D_new=D_new)
            tr[g] = cache
            C[g] = Cg
        Xij = {g: C[g][:B] - C[g][B:2 * B] for g in SIDES}
        Xik = {g: C[g][:B] - C[g][2 * B:] for g in SIDES}
        Rij = np.tanh(np.concatenate([Xij[g] @ p[f"{g}.W_r"].T + p[f"{g}.b_r"] for g in ("S", "M")], axis=1))
        Rik = np.tanh(np.concatenate([Xik[g] @ p[f"{g}.W_r"].T + p[f"{g}.b_r"] for g in ("S", "M")], axis=1))
        logit = (Rij - Rik) @ p["W_o"] + p["b_o"][0]
        y_hat = sigmoid(logit)
        tr.update(Xij=Xij, Xik=Xik, Rij=Rij, Rik=Rik, logit=logit, y_hat=y_hat, lc=lc)
        tr["loss_opt"] = float(np.mean(cross_entropy(y_hat, y)))
        tr["loss"] = tr["loss_opt"] + cfg.alpha * (lc["S"] + lc["M"])
        return tr

    # ----------------------------------------------------------------- backward
    def backward(self, tr):
        cfg, p = self.config, self.params
        B = tr["B"]
        grads = {name: np.zeros_like(val) for name, val in p.items()}
        g_logit = (tr["y_hat"] - tr["y"]) / B
        Rij, Rik = tr["Rij"], tr["Rik"]
        grads["W_o"] = (Rij - Rik).T @ g_logit
        grads["b_o"] = np.array([g_logit.sum()])
        dPij = np.outer(g_logit, p["W_o"]) * (1.0 - Rij ** 2)
        dPik = -np.outer(g_logit, p["W_o"]) * (1.0 - Rik ** 2)
        d_r = cfg.d_r
        for slot, g in enumerate(("S", "M")):
            sl = slice(slot * d_r, (slot + 1) * d_r)
            dij, dik = dPij[:, sl], dPik[:, sl]
            grads[f"{g}.W_r"] = dij.T @ tr["Xij"][g] + dik.T @ tr["Xik"][g]
            grads[f"{g}.b_r"] = dij.sum(axis=0) + dik.sum(axis=0)
            dXij = dij @ p[f"{g}.W_r"]
            dXik = dik @ p[f"{g}.W_r"]
            dC = np.concatenate([dXij + dXik, -dXij, -dXik], axis=0)
            self._side_backward(g, tr[g], dC, grads)
        return grads

    def _side_backward(self, g, c, dC, grads):
        cfg, p = self.config, self.params
        D, V, T, Cg = c["D"], c["V"], c["T"], c["C"]
        u_c = p[f"{g}.u_c"]
        dLog = dC * Cg * (1.0 - Cg)
        dLD = dLog @ D
        grads[f"{g}.u_c"] = (dLD * T).sum(axis=0)
        dV = dLD * u_c[None, :] * (1.0 - T ** 2)

        if cfg.alpha > 0:
            N, dim = V.shape
            dDn = cfg.alpha * community_constraint_grad(c["D_new"])
            S, Z = c["S"], c["Z"]
            dS = (dDn[None] / N) * (Z[:, None, :] - D[None])
            dZ = (S * dDn[None]).sum(axis=1) / N
            dSp = dS * S * (1.0 - S)
            W_s = p[f"{g}.W_s"]
            dSp_n = dSp.sum(axis=1)
            grads[f"{g}.b_s"] = dSp_n.sum(axis=0)
            grads[f"{g}.W_s"] = np.concatenate([dSp_n.T @ V, dSp.sum(axis=0).T @ D], axis=1)
            dV += dSp_n @ W_s[:, :dim]
            dZp = dZ * (1.0 - Z ** 2)
            grads[f"{g}.W_z"] = dZp.T @ V
            grads[f"{g}.b_z"] = dZp.sum(axis=0)
            dV += dZp @ p[f"{g}.W_z"]

        Xhat, std = c["Xhat"], c["std"]
        gamma = p[f"{g}.bn_gamma"]
        grads[f"{g}.bn_gamma"] = (dV * Xhat).sum(axis=0)
        grads[f"{g}.bn_beta"] = dV.sum(axis=0)
        dXhat = dV * gamma
        N = dV.shape[0]
        dX = (N * dXhat - dXhat.sum(axis=0) - Xhat * (dXhat * Xhat).sum(axis=0)) / (N * std)

        off = cfg.C_raw if g == "M" else 0
        dVe = dX[:, off:off + cfg.d_e]
        dVp = dX[:, off + cfg.d_e:]
        if cfg.use_dtr:
            dZe = dVe * (1.0 - c["Ve"] ** 2)
            grads[f"{g}.W_e"] = dZe.T @ c["P"]
            grads[f"{g}.b_e"] = dZe.sum(axis=0)

        H, att = p[f"{g}.H"], c["att"]
        dH = att.T @ dVp
        dAtt = dVp @ H.T
        dE = att * (dAtt - (att * dAtt).sum(axis=1, keepdims=True))
        de = dE.sum(axis=0)
        if cfg.use_nf:
            a = c["a"]
            if g == "M":
                if cfg.use_cf:
                    dw = np.zeros(cfg.C_raw)
                    np.add.at(dw, self.object_community, de * a)
                    grads["M.w"] = dw
                da = de * c["w_obj"]
            else:
                da = de
            Ua = c["Ua"]
            grads[f"{g}.u_p"] = Ua.T @ da
            dUp = np.outer(da, p[f"{g}.u_p"]) * (1.0 - Ua ** 2)
            grads[f"{g}.W_p"] = dUp.T @ H
            grads[f"{g}.b_p"] = dUp.sum(axis=0)
            dH += dUp @ p[f"{g}.W_p"]
        grads[f"{g}.H"] = dH

    # ------------------------------------------------------------------- state
    def commit(self, tr):
        """Write the gated memory update and batch-norm running stats from a training trace."""
        m = self.config.batch_norm_momentum
        for g in SIDES:
            c = tr[g]
            self.memory[g] = c["D_new"].copy()
            run = self.bn_running[g]
            run["mean"] = m * run["mean"] + (1.0 - m) * c["batch_mean"]
            run["var"] = m * run["var"] + (1.0 - m) * c["batch_var"]

    # --------------------------------------------------------------- inference
    def affiliations(self, g, P, Vc):
        V = self.represent(g, P, Vc, train=False)
        return sigmoid(np.tanh(V) @ (self.memory[g] * self.params[f"{g}.u_c"][None, :]).T)

    def predict(self, P, Vc):
        """Scores ``y_hat`` for ``B`` triplets laid out as ``3B`` rows (inference mode)."""
        B = P["M"].shape[0] // 3
        c = {}
        for g in SIDES:
            Cg = self.affiliations(g, P[g], Vc)
            c[g] = (Cg[:B], Cg[B:2 * B], Cg[2 * B:])
        p = self.params
        y_hat, _ = pairwise_forward(c, {g: p[f"{g}.W_r"] for g in SIDES},
                                    {g: p[f"{g}.b_r"] for g in SIDES}, p["W_o"], p["b_o"])
        return y_hat

    # ------------------------------------------------------------- checkpoint
    def to_json(self):
        def enc(a):
            a = np.asarray(a, dtype=float)
            return {"shape": list(a.shape), "data": a.ravel().tolist()}

        order = list(param_shapes(self.config))
        doc = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "param_order": order,
            "params": {k: enc(self.params[k]) for k in order},
            "memory": {g: enc(self.memory[g]) for g in SIDES},
            "bn_running": {g: {k: enc(v) for k, v in sorted(self.bn_running[g].items())} for g in SIDES},
            "object_community": self.object_community.tolist(),
        }
        return json.dumps(doc, sort_keys=False)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")

        def dec(d):
            return np.array(d["data"], dtype=float).reshape(d["shape"])

        names = {f.name for f in fields(ModelConfig)}
        cfg = ModelConfig(**{k: v for k, v in doc["config"].items() if k in names})
        params = {k: dec(doc["params"][k]) for k in doc["param_order"]}
        expected = param_shapes(cfg)
        for k, shape in expected.items():
            if k not in params or params[k].shape != tuple(shape):
                raise ValueError(f"checkpoint parameter {k} missing or misshapen")
        memory = {g: dec(doc["memory"][g]) for g in SIDES}
        bn = {g: {k: dec(v) for k, v in doc["bn_running"][g].items()} for g in SIDES}
        return cls(cfg, params, memory, bn, doc["object_community"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
