"""Loss assembly, exact gradients, Adam, the training loop, and cost estimation.

The training score pipeline is: backbone forward -> matching degrees ->
bias factor -> dual-path aggregation -> final score -> pairwise ranking
loss, plus the contrastive term and L2. Gradients come off the autodiff
tape and are verified against central finite differences by grad_check.
"""

import base64
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import causal as cz
from . import contrast as cl
from . import corpus
from . import fusion as fu

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericalError(RuntimeError):
    """Non-finite loss or gradient."""


@dataclass
class CostEstimate:
    """Incremental per-epoch cost terms of the add-on modules (abstract ops)."""

    jaccard_term: float
    moe_term: float
    cl_term: float
    total: float
    note: str = ""


def estimate_cost(N, B, r, k_exp, d, u_s, i_s):
    """N*B^2*(r + k_exp*d) + (u_s + i_s)*B^2*d^2, with the terms split out."""
    if min(N, B, r, k_exp, d, u_s, i_s) < 0:
        raise ValueError("cost inputs must be nonnegative")
    jaccard_term = float(N) * B * B * r
    moe_term = float(N) * B * B * k_exp * d
    cl_term = float(u_s + i_s) * B * B * d * d
    note = "single behavior: contrastive/aggregation pairs vanish" if B <= 1 else ""
    return CostEstimate(jaccard_term, moe_term, cl_term,
                        jaccard_term + moe_term + cl_term, note)


class ModelParams:
    """Named trainable groups (autodiff tensors) plus the shapes to rebuild them."""

    def __init__(self, groups, meta):
        self.groups = {name: ad.Tensor(arr, requires_grad=True)
                       for name, arr in groups.items()}
        self.meta = dict(meta)

    def names(self):
        return list(self.groups.keys())

    def arrays(self):
        return {name: t.data for name, t in self.groups.items()}

    def copy(self):
        return ModelParams({n: t.data.copy() for n, t in self.groups.items()}, self.meta)

    def backbone_group_names(self):
        return [n for n in self.groups if n.startswith(("user_base", "item_base"))]

    def trainable_names(self, freeze_backbone=False):
        frozen = set(self.backbone_group_names()) if freeze_backbone else set()
        return [n for n in self.groups if n not in frozen]


def init_params(cfg, M, N, seed=None):
    """Fresh ModelParams for a dataset of M users and N items."""
    seed = cfg.seed if seed is None else seed
    K = len(cfg.behaviors)
    kind = cfg.backbone_kind()
    rng = np.random.default_rng(seed)
    groups = bb.init_embeddings(M, N, K, cfg.d, seed, kind)
    gate_rng = np.random.default_rng(rng.integers(2**63))
    groups.update(cfg.moe_gate().init_params(gate_rng))
    groups["lambda_j"] = np.asarray(cfg.lambda_j_init, dtype=np.float64)
    groups["lambda_m"] = np.asarray(cfg.lambda_m_init, dtype=np.float64)
    if cfg.temp_rule == "learnable":
        groups["tau"] = np.asarray(cfg.tau0, dtype=np.float64)
    meta = {"M": M, "N": N, "K": K, "d": cfg.d, "backbone": cfg.backbone,
            "layers": cfg.layers, "n_experts": cfg.n_experts,
            "expert_hidden": cfg.expert_hidden, "temp_rule": cfg.temp_rule}
    return ModelParams(groups, meta)


def bpr_loss(s_pos, s_neg):
    """Pairwise ranking loss: mean -log sigmoid(s_pos - s_neg)."""
    diff = ad.as_tensor(s_pos) - ad.as_tensor(s_neg)
    return ad.mul(ad.logsigmoid(diff).mean(), -1.0)


@dataclass
class Batch:
    """One training batch: target triples plus optional per-auxiliary triples."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray
    aux: dict = None  # behavior k -> (users, pos, neg), only when aux_bpr is on


def final_scores(es, batch_users, batch_items, bias, jaccard, cfg, params):
    """Training scores S_final for (user, item) pairs under the full pipeline."""
    K = es.num_behaviors
    kt = cfg.schema().target_index
    dp = cfg.debias_params()
    fp = cfg.fusion_params()
    gate = cfg.moe_gate()
    f_t = bb.match_scores(es, kt, batch_users, batch_items)
    g_t = cz.bias_factor(bias.user_bias[batch_users, kt],
                         bias.item_bias[batch_items, kt], dp)
    s_base = cz.base_score(f_t, np.asarray(g_t, dtype=np.float64))
    cons = []
    if fp.agg_enabled:
        for k in range(K):
            if k == kt:
                continue
            f_k = bb.match_scores(es, k, batch_users, batch_items)
            jac = jaccard.values[batch_users, k]
            if fp.moe_enabled:
                g_moe = fu.moe_gate_forward(
                    gate, params.groups,
                    ad.take_rows(es.user[k], batch_users),
                    ad.take_rows(es.item[k], batch_items),
                    bias.user_bias[batch_users, k],
                    bias.item_bias[batch_items, k])
            else:
                g_moe = 0.0
            cons.append(fu.contribution(f_k, jac, g_moe,
                                        params.groups["lambda_j"],
                                        params.groups["lambda_m"], fp))
    c_total = fu.total_contribution(cons, fp)
    return fu.final_score(s_base, c_total)


def _loss_terms(batch, params, split, bias, jaccard, cfg, rng=None):
    """(total, bpr, cl, l2) tensors for a batch; builds the tape."""
    schema = cfg.schema()
    K = schema.num_behaviors
    kind = cfg.backbone_kind()
    graphs = getattr(split, "graphs", None)
    es = bb.forward(kind, params.groups, graphs, split.train.num_users,
                    split.train.num_items, K)
    s_pos = final_scores(es, batch.users, batch.pos_items, bias, jaccard, cfg, params)
    s_neg = final_scores(es, batch.users, batch.neg_items, bias, jaccard, cfg, params)
    bpr = bpr_loss(s_pos, s_neg)
    if batch.aux:
        dp = cfg.debias_params()
        for k in sorted(batch.aux):
            au, ap, an = batch.aux[k]
            g_p = cz.bias_factor(bias.user_bias[au, k], bias.item_bias[ap, k], dp)
            g_n = cz.bias_factor(bias.user_bias[au, k], bias.item_bias[an, k], dp)
            sb_p = cz.base_score(bb.match_scores(es, k, au, ap), np.asarray(g_p, dtype=np.float64))
            sb_n = cz.base_score(bb.match_scores(es, k, au, an), np.asarray(g_n, dtype=np.float64))
            bpr = bpr + bpr_loss(sb_p, sb_n)
    tau_param = params.groups.get("tau")
    cl_term = cl.cl_total(es, bias, batch.users, batch.pos_items, cfg.cl_config(),
                          cfg.temperature_rule(), tau_param=tau_param, rng=rng)
    l2 = ad.Tensor(0.0)
    for name in params.trainable_names(cfg.freeze_backbone):
        t = params.groups[name]
        l2 = l2 + ad.power(t, 2.0).sum()
    l2 = ad.mul(l2, cfg.l2)
    total = bpr + ad.mul(cl_term, cfg.lambda_cl) + l2
    return total, bpr, cl_term, l2


def total_loss(batch, params, split, bias, jaccard, cfg, rng=None):
    """Scalar training loss with its exposed terms.

    Returns (total, {"bpr":..., "cl":..., "l2":...}) as floats; raises
    NumericalError naming the offending term if any is non-finite.
    """
    with ad.no_grad():
        total, bpr, cl_term, l2 = _loss_terms(batch, params, split, bias, jaccard,
                                              cfg, rng)
    terms = {"bpr": bpr.item(), "cl": cl_term.item(), "l2": l2.item()}
    for name, v in terms.items():
        if not np.isfinite(v):
            raise NumericalError("non-finite %s term: %r" % (name, v))
    return total.item(), terms


def gradients(batch, params, split, bias, jaccard, cfg, rng=None):
    """Exact gradients of the total loss for every trainable group."""
    grads, _, _ = _grads_and_loss(batch, params, split, bias, jaccard, cfg, rng)
    return grads


def _grads_and_loss(batch, params, split, bias, jaccard, cfg, rng=None):
    """One tape pass: (gradient dict, total loss float, term dict)."""
    total, bpr, cl_term, l2 = _loss_terms(batch, params, split, bias, jaccard, cfg, rng)
    terms = {"bpr": bpr.item(), "cl": cl_term.item(), "l2": l2.item()}
    for name, v in terms.items():
        if not np.isfinite(v):
            raise NumericalError("non-finite %s term: %r" % (name, v))
    total.backward()
    grads = {}
    for name in params.trainable_names(cfg.freeze_backbone):
        t = params.groups[name]
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient in group %r" % name)
        grads[name] = g
        t.grad = None
    for name in params.backbone_group_names():
        if cfg.freeze_backbone:
            grads[name] = np.zeros_like(params.groups[name].data)
        params.groups[name].grad = None
    return grads, total.item(), terms


class AdamState:
    """First/second moment accumulators with bias correction."""

    def __init__(self, params):
        self.m = {n: np.zeros_like(t.data) for n, t in params.groups.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.groups.items()}
        self.t = 0


def step(params, grads, state, lr):
    """One Adam update applied in place; groups without gradients are untouched."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, g in grads.items():
        m = state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        params.groups[name].data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, state


@dataclass
class TrainContext:
    """Everything fit() needs besides the config: split, tables, graphs."""

    split: corpus.SplitDataset
    bias: corpus.BiasTable
    jaccard: corpus.JaccardTable
    graphs: object = None


def _positive_pairs(ds, k):
    users, items = [], []
    for u in range(ds.num_users):
        row = ds.adj[k][u]
        if row.size:
            users.append(np.full(row.size, u, dtype=np.int64))
            items.append(row)
    if not users:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(users), np.concatenate(items)


def _sample_neg_array(ds, k, users, rng):
    """One uniform negative per user, outside the user's behavior-k train list."""
    out = np.empty(users.size, dtype=np.int64)
    for j, u in enumerate(users):
        pos = ds.adj[k][u]
        if pos.size >= ds.num_items:
            raise corpus.DataError("user %d has no negative candidates" % u)
        while True:
            cand = int(rng.integers(ds.num_items))
            at = np.searchsorted(pos, cand)
            if at == pos.size or pos[at] != cand:
                out[j] = cand
                break
    return out


def fit(split, bias, jaccard, cfg, graphs=None, log=None):
    """Seeded training loop with per-epoch ranking evaluation and early stop.

    Returns (best ModelParams, history list of per-epoch dicts).
    """
    from . import evaluate as ev

    ds = split.train
    kt = ds.schema.target_index
    kind = cfg.backbone_kind()
    if kind.kind != "mf" and graphs is None:
        graphs = bb.PropagationGraph(ds)
    split.graphs = graphs
    params = init_params(cfg, ds.num_users, ds.num_items)
    state = AdamState(params)
    rng = np.random.default_rng(cfg.seed)
    pos_users, pos_items = _positive_pairs(ds, kt)
    if pos_users.size == 0:
        raise corpus.DataError("target behavior has no training interactions")
    aux_pairs = {}
    if cfg.aux_bpr:
        for k in range(ds.schema.num_behaviors):
            if k != kt:
                aux_pairs[k] = _positive_pairs(ds, k)
    history = []
    best_metric, best_params, best_epoch = -1.0, params.copy(), 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(pos_users.size)
        epoch_terms = {"bpr": 0.0, "cl": 0.0, "l2": 0.0, "total": 0.0}
        n_batches = 0
        for lo in range(0, pos_users.size, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            users = np.repeat(pos_users[sel], cfg.neg_per_pos)
            pos = np.repeat(pos_items[sel], cfg.neg_per_pos)
            neg = _sample_neg_array(ds, kt, users, rng)
            aux = {}
            if cfg.aux_bpr:
                for k, (au_all, ap_all) in sorted(aux_pairs.items()):
                    if au_all.size == 0:
                        continue
                    pick = rng.integers(au_all.size, size=sel.size)
                    au, apos = au_all[pick], ap_all[pick]
                    aneg = _sample_neg_array(ds, k, au, rng)
                    aux[k] = (au, apos, aneg)
            batch = Batch(users, pos, neg, aux or None)
            grads, total, terms = _grads_and_loss(batch, params, split, bias,
                                                  jaccard, cfg, rng=rng)
            params, state = step(params, grads, state, cfg.lr)
            for key in ("bpr", "cl", "l2"):
                epoch_terms[key] += terms[key]
            epoch_terms["total"] += total
            n_batches += 1
        for key in epoch_terms:
            epoch_terms[key] /= max(n_batches, 1)
        hr10 = _eval_hr10(params, split, cfg, ev)
        entry = {"epoch": epoch, "hr10": hr10, **epoch_terms}
        history.append(entry)
        if log:
            log(entry)
        if hr10 > best_metric:
            best_metric, best_params, best_epoch = hr10, params.copy(), epoch
        elif epoch - best_epoch >= cfg.patience:
            break
    return best_params, history


def _eval_hr10(params, split, cfg, ev):
    if not split.test_users().size:
        return 0.0
    rr = ev.rank_all(params, split, cfg)
    hr, _ = ev.hr_ndcg(rr, 10)
    return hr


def forward_embeddings(params, split, cfg):
    """EmbeddingSet for evaluation (no tape)."""
    kind = cfg.backbone_kind()
    graphs = getattr(split, "graphs", None)
    if kind.kind != "mf" and graphs is None:
        graphs = bb.PropagationGraph(split.train)
        split.graphs = graphs
    with ad.no_grad():
        return bb.forward(kind, params.groups, graphs, split.train.num_users,
                          split.train.num_items, len(cfg.behaviors))


# ------------------------------------------------------------- grad checking

def _loss_value(batch, params, split, bias, jaccard, cfg):
    with ad.no_grad():
        total, _, _, _ = _loss_terms(batch, params, split, bias, jaccard, cfg,
                                     rng=np.random.default_rng(0))
    return total.item()


def grad_check(cfg_builder, trials=20, h=1e-6, seed=0, corrupt=None):
    """Max combined absolute/relative error of analytic vs central-difference grads.

    cfg_builder(trial_rng) must yield (batch, params, split, bias, jaccard, cfg)
    for a small random instance. `corrupt` is a test hook: a group name whose
    analytic gradient gets an offset before comparison. Returns a report dict
    {group: max error} plus "__max__".
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    rng = np.random.default_rng(seed)
    report = {}
    for _ in range(trials):
        batch, params, split, bias, jaccard, cfg = cfg_builder(rng)
        grads = gradients(batch, params, split, bias, jaccard, cfg,
                          rng=np.random.default_rng(0))
        if corrupt is not None and corrupt in grads:
            grads[corrupt] = grads[corrupt] + 1.0
        for name in params.trainable_names(cfg.freeze_backbone):
            arr = params.groups[name].data
            g_fd = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                ix = it.multi_index
                orig = arr[ix]
                arr[ix] = orig + h
                fp = _loss_value(batch, params, split, bias, jaccard, cfg)
                arr[ix] = orig - h
                fm = _loss_value(batch, params, split, bias, jaccard, cfg)
                arr[ix] = orig
                g_fd[ix] = (fp - fm) / (2.0 * h)
                it.iternext()
            ga = grads[name]
            denom = np.maximum(1.0, np.maximum(np.abs(ga), np.abs(g_fd)))
            err = float(np.max(np.abs(ga - g_fd) / denom)) if arr.size else 0.0
            report[name] = max(report.get(name, 0.0), err)
    report["__max__"] = max(report.values()) if report else 0.0
    return report


# ------------------------------------------------------------- checkpointing

def _encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_array(doc):
    arr = np.frombuffer(base64.b64decode(doc["data"]), dtype="<f8")
    return arr.reshape(doc["shape"]).astype(np.float64)


def save_checkpoint(path, params, cfg, epoch, metric):
    doc = {
        "header": {"config": cfg.resolved(), "config_sha256": cfg.sha256(),
                   "epoch": epoch, "metric": metric, "meta": params.meta},
        "groups": {name: _encode_array(t.data) for name, t in params.groups.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    groups = {name: _decode_array(g) for name, g in doc["groups"].items()}
    return ModelParams(groups, doc["header"]["meta"]), doc["header"]
