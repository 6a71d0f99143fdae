"""Embedding backbones: matrix factorization and two light graph-convolution kinds.

All three produce behavior-specific user/item embedding tensors from
trainable base tables. Graph kinds propagate over symmetrically normalized
per-behavior bipartite adjacencies held in CSR form and multiplied through
the kernels module.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels

BACKBONE_KINDS = ("mf", "lightprop", "cascade")


@dataclass(frozen=True)
class BackboneKind:
    kind: str  # "mf" | "lightprop" | "cascade"
    layers: int = 2

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ValueError("unknown backbone kind %r" % (self.kind,))
        if self.kind != "mf" and self.layers < 1:
            raise ValueError("graph backbones need layers >= 1")


@dataclass
class EmbeddingSet:
    """Behavior-specific embeddings: K user tensors (M,d) and K item tensors (N,d)."""

    user: list
    item: list
    d: int

    @property
    def num_behaviors(self):
        return len(self.user)


class PropagationGraph:
    """Symmetrically normalized bipartite adjacency per behavior, CSR over M+N nodes.

    Users occupy node ids [0, M); items [M, M+N). Entry weights are
    1/sqrt(deg(u) * deg(i)); zero-degree nodes have empty rows.
    """

    def __init__(self, ds):
        M, N = ds.num_users, ds.num_items
        self.num_users, self.num_items = M, N
        self.indptr, self.indices, self.data = [], [], []
        for k in range(ds.schema.num_behaviors):
            rows = [np.empty(0, dtype=np.int64) for _ in range(M + N)]
            deg = np.zeros(M + N, dtype=np.int64)
            for u in range(M):
                items = ds.adj[k][u]
                deg[u] = items.size
                if items.size:
                    np.add.at(deg, M + items, 1)
            for u in range(M):
                rows[u] = M + ds.adj[k][u]
            item_rows = [[] for _ in range(N)]
            for u in range(M):
                for v in ds.adj[k][u]:
                    item_rows[v].append(u)
            for v in range(N):
                rows[M + v] = np.array(sorted(item_rows[v]), dtype=np.int64)
            indptr = np.zeros(M + N + 1, dtype=np.int64)
            indptr[1:] = np.cumsum([r.size for r in rows])
            indices = np.concatenate(rows) if indptr[-1] else np.empty(0, dtype=np.int64)
            inv_sqrt = np.zeros(M + N)
            nz = deg > 0
            inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
            src = np.repeat(np.arange(M + N), np.diff(indptr))
            data = inv_sqrt[src] * inv_sqrt[indices] if indices.size else np.empty(0)
            self.indptr.append(indptr)
            self.indices.append(indices)
            self.data.append(data)

    def propagate(self, k, x):
        """One propagation step x -> A_k @ x as an autodiff op (A_k symmetric)."""
        indptr, indices, data = self.indptr[k], self.indices[k], self.data[k]
        x = ad.as_tensor(x)
        out_data = kernels.csr_matmul(indptr, indices, data, x.data)

        def backward(g):
            x._accumulate(kernels.csr_matmul(indptr, indices, data, g))

        return ad._node(out_data, (x,), backward)


def init_embeddings(M, N, K, d, seed, kind):
    """Base parameter tables, i.i.d. normal(0, 0.1).

    MF keeps one table per behavior and side; graph kinds share one table
    per side (behavior specificity comes from propagation).
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    tables = {}
    if kind.kind == "mf":
        for k in range(K):
            tables["user_base_%d" % k] = rng.normal(0.0, 0.1, size=(M, d))
        for k in range(K):
            tables["item_base_%d" % k] = rng.normal(0.0, 0.1, size=(N, d))
    else:
        tables["user_base"] = rng.normal(0.0, 0.1, size=(M, d))
        tables["item_base"] = rng.normal(0.0, 0.1, size=(N, d))
    return tables


def forward(kind, params, graphs, M, N, K):
    """Behavior-specific embeddings from base tables.

    MF: the per-behavior tables as-is. LightProp: per behavior, the mean of
    propagation layers 0..L started from the shared base. Cascade: like
    LightProp, but behavior k starts from behavior k-1's output plus the
    base table (residual), in schema order.
    """
    d = None
    if kind.kind == "mf":
        users = [params["user_base_%d" % k] for k in range(K)]
        items = [params["item_base_%d" % k] for k in range(K)]
        return EmbeddingSet(users, items, users[0].shape[1])
    if graphs is None:
        raise ValueError("graph backbone requires a PropagationGraph")
    base = ad.concat([params["user_base"], params["item_base"]], axis=0)
    d = base.shape[1]
    users, items = [], []
    if kind.kind == "lightprop":
        for k in range(K):
            e_k = _light_layers(graphs, k, base, kind.layers)
            users.append(_rows(e_k, 0, M))
            items.append(_rows(e_k, M, M + N))
    else:  # cascade
        current = base
        for k in range(K):
            e_k = _light_layers(graphs, k, current, kind.layers)
            users.append(_rows(e_k, 0, M))
            items.append(_rows(e_k, M, M + N))
            current = e_k + base
    return EmbeddingSet(users, items, d)


def _light_layers(graphs, k, start, layers):
    acc = start
    x = start
    for _ in range(layers):
        x = graphs.propagate(k, x)
        acc = acc + x
    return acc * (1.0 / (layers + 1))


def _rows(t, lo, hi):
    out_data = t.data[lo:hi]

    def backward(g):
        full = np.zeros_like(t.data)
        full[lo:hi] = g
        t._accumulate(full)

    return ad._node(out_data, (t,), backward)


def match_score(es, k, u, i):
    """Inner-product matching degree f_k(u, i) for a single pair."""
    return float(es.user[k].data[u] @ es.item[k].data[i])


def match_scores(es, k, users, items):
    """Batched f_k over paired index arrays, as an autodiff tensor."""
    e_u = ad.take_rows(es.user[k], users)
    e_i = ad.take_rows(es.item[k], items)
    return ad.rowdot(e_u, e_i)
