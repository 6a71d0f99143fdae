"""Synthetic confounded multi-behavior data with known ground-truth preferences.

Interactions are drawn with probability proportional to a logistic affinity
times per-entity behavior-bias weights raised to a strength exponent, so
the spurious signal is controllable and deconfounding is measurable against
the latent affinities.
"""

import base64
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import BehaviorSchema, InteractionDataset


@dataclass(frozen=True)
class SynthConfig:
    M: int = 300
    N: int = 300
    K: int = 3
    d_true: int = 8
    density: tuple = (20.0,)      # per-behavior mean interactions per user; cycled
    bias_strength: float = 1.0
    cascade: bool = True          # target requires a prior auxiliary interaction
    seed: int = 0
    dirichlet: float = 1.0

    def __post_init__(self):
        if min(self.M, self.N, self.K, self.d_true) < 1:
            raise ValueError("M, N, K, d_true must be >= 1")
        if any(x <= 0 for x in self.density):
            raise ValueError("density must be > 0")
        if self.bias_strength < 0:
            raise ValueError("bias_strength must be >= 0")

    def density_of(self, k):
        return float(self.density[k % len(self.density)])

    def behavior_names(self):
        return tuple("b%d" % k for k in range(self.K))


@dataclass
class GroundTruth:
    affinity: np.ndarray    # (M, N) latent inner products
    bias_u_gen: np.ndarray  # (M, K) generative user bias rows
    bias_i_gen: np.ndarray  # (N, K)
    user_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)


def generate_confounded(cfg):
    """(InteractionDataset, GroundTruth), deterministic in cfg.seed.

    The target behavior is the last one; with cascade on, a target
    interaction is kept only where some auxiliary interaction fired for the
    same (user, item).
    """
    rng = np.random.default_rng(cfg.seed)
    latent_u = rng.normal(size=(cfg.M, cfg.d_true))
    latent_i = rng.normal(size=(cfg.N, cfg.d_true))
    affinity = latent_u @ latent_i.T
    bias_u = rng.dirichlet(np.full(cfg.K, cfg.dirichlet), size=cfg.M)
    bias_i = rng.dirichlet(np.full(cfg.K, cfg.dirichlet), size=cfg.N)
    pref = 1.0 / (1.0 + np.exp(-affinity))
    draws = rng.random(size=(cfg.K, cfg.M, cfg.N))
    hit = np.zeros((cfg.K, cfg.M, cfg.N), dtype=bool)
    for k in range(cfg.K):
        w = pref * (bias_u[:, k][:, None] * bias_i[None, :, k]) ** cfg.bias_strength
        scale = cfg.density_of(k) * cfg.M / max(w.sum(), 1e-300)
        hit[k] = draws[k] < np.minimum(1.0, scale * w)
    if cfg.K < 2:
        raise ValueError("need K >= 2 behaviors to build a dataset")
    if cfg.cascade:
        hit[cfg.K - 1] &= hit[:cfg.K - 1].any(axis=0)
    schema = BehaviorSchema(cfg.behavior_names(), cfg.K - 1)
    user_ids = ["u%d" % u for u in range(cfg.M)]
    item_ids = ["i%d" % i for i in range(cfg.N)]
    adj = [[np.flatnonzero(hit[k, u]).astype(np.int64) for u in range(cfg.M)]
           for k in range(cfg.K)]
    ds = InteractionDataset(schema, cfg.M, cfg.N, adj, user_ids, item_ids)
    ds.validate()
    gt = GroundTruth(affinity, bias_u, bias_i, user_ids, item_ids)
    return ds, gt


def true_preference_metric(scores, gt, k_eval=50, train_mask=None, top_t=10):
    """Mean NDCG@k_eval of a scorer against affinity-ranked ground truth.

    Per user the relevant set is the top_t items by latent affinity outside
    that user's train positives; the scorer's candidate ranking excludes the
    same positives. Ties break by ascending item id.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != gt.affinity.shape:
        raise ValueError("scores shape %r != affinity shape %r"
                         % (scores.shape, gt.affinity.shape))
    M, N = scores.shape
    if train_mask is None:
        train_mask = np.zeros((M, N), dtype=bool)
    idcg = np.cumsum(1.0 / np.log2(np.arange(2, top_t + 2)))
    total, counted = 0.0, 0
    for u in range(M):
        cand = np.flatnonzero(~train_mask[u])
        if cand.size == 0:
            continue
        t = min(top_t, cand.size)
        # stable tie-break by ascending item id for both rankings
        rel_order = cand[np.lexsort((cand, -gt.affinity[u, cand]))][:t]
        relevant = np.zeros(N, dtype=bool)
        relevant[rel_order] = True
        ranking = cand[np.lexsort((cand, -scores[u, cand]))][:k_eval]
        gains = relevant[ranking] / np.log2(np.arange(2, ranking.size + 2))
        total += gains.sum() / idcg[min(t, k_eval) - 1]
        counted += 1
    if counted == 0:
        raise ValueError("no user has a nonempty relevance set")
    return total / counted


def train_positive_mask(ds):
    """(M, N) boolean mask of the train target-behavior interactions."""
    kt = ds.schema.target_index
    mask = np.zeros((ds.num_users, ds.num_items), dtype=bool)
    for u in range(ds.num_users):
        mask[u, ds.adj[kt][u]] = True
    return mask


# ------------------------------------------------------------------ file I/O

def write_synth(ds, gt, out_dir):
    """Per-behavior TSVs in corpus format plus ground_truth.json."""
    os.makedirs(out_dir, exist_ok=True)
    for k, name in enumerate(ds.schema.names):
        with open(os.path.join(out_dir, "%s.tsv" % name), "w", encoding="utf-8") as fh:
            for u in range(ds.num_users):
                for i in ds.adj[k][u]:
                    fh.write("%s\t%s\n" % (ds.user_ids[u], ds.item_ids[i]))
    doc = {
        "users": gt.user_ids,
        "items": gt.item_ids,
        "shape": [int(x) for x in gt.affinity.shape],
        "affinity_b64": base64.b64encode(
            np.ascontiguousarray(gt.affinity, dtype="<f8").tobytes()).decode("ascii"),
        "bias_u_gen": gt.bias_u_gen.tolist(),
        "bias_i_gen": gt.bias_i_gen.tolist(),
    }
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def read_ground_truth(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    shape = tuple(doc["shape"])
    aff = np.frombuffer(base64.b64decode(doc["affinity_b64"]), dtype="<f8")
    return GroundTruth(aff.reshape(shape).astype(np.float64),
                       np.asarray(doc["bias_u_gen"]),
                       np.asarray(doc["bias_i_gen"]),
                       list(doc["users"]), list(doc["items"]))
