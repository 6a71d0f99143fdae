"""Bias-aware contrastive alignment across behavior views.

Each ordered pair of distinct behaviors contributes an in-batch InfoNCE
term for users and (weighted by beta) for items; the temperature is keyed
on the downstream behavior's bias proxy. Similarity is cosine; zero-norm
vectors get similarity 0 and bump a warning counter.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad

# incremented whenever a zero-norm vector enters a similarity computation
ZERO_NORM_WARNINGS = {"count": 0}

TEMP_VARIANTS = ("bias_aware", "fixed", "learnable", "random", "linear_alt", "inverse_alt")


@dataclass(frozen=True)
class TemperatureRule:
    """One of the temperature strategies; unused fields are ignored."""

    variant: str = "bias_aware"
    tau0: float = 0.2
    alpha: float = 0.5
    tau: float = 0.1            # fixed variant
    init: float = 0.2           # learnable variant
    lo: float = 0.1             # random variant lower bound
    hi: float = 0.5             # random variant upper bound
    clamp_lo: float = 0.01      # learnable clamp range
    clamp_hi: float = 1.0
    tau_min: float = 0.01       # inverse_alt floor

    def __post_init__(self):
        if self.variant not in TEMP_VARIANTS:
            raise ValueError("unknown temperature variant %r" % (self.variant,))
        if self.variant in ("bias_aware", "linear_alt", "inverse_alt") and not 0 <= self.alpha < 1:
            raise ValueError("alpha must be in [0, 1)")


@dataclass(frozen=True)
class ClConfig:
    beta: float = 1.0
    lambda_cl: float = 0.1
    min_interaction_filter: bool = True
    cl_enabled: bool = True
    in_batch_negatives: bool = True  # False: denominator spans the full entity set


def temperature(rule, b, rng=None, tau_param=None):
    """Per-anchor temperature for downstream bias values b (array-like in [0,1]).

    Returns a Tensor so a learnable temperature keeps its gradient path;
    every produced value is > 0.
    """
    b = np.asarray(b, dtype=np.float64)
    if rule.variant == "bias_aware":
        return ad.Tensor(rule.tau0 * (1.0 - rule.alpha * b))
    if rule.variant == "fixed":
        return ad.Tensor(np.full_like(b, rule.tau))
    if rule.variant == "learnable":
        if tau_param is None:
            raise ValueError("learnable temperature needs the tau parameter")
        return ad.clip(tau_param, rule.clamp_lo, rule.clamp_hi) * ad.Tensor(np.ones_like(b))
    if rule.variant == "random":
        if rng is None:
            raise ValueError("random temperature needs an rng")
        return ad.Tensor(np.full_like(b, rng.uniform(rule.lo, rule.hi)))
    if rule.variant == "linear_alt":
        return ad.Tensor(rule.tau0 * (1.0 + rule.alpha * b))
    # inverse_alt: tau0 * (1 - alpha / b) is nonpositive for b <= alpha; clamp
    val = rule.tau0 * (1.0 - rule.alpha / np.maximum(b, rule.alpha))
    return ad.Tensor(np.maximum(rule.tau_min, val))


def infonce_loss(anchors, positives, temps):
    """Mean InfoNCE over a batch of anchor/positive rows across two views.

    anchors, positives: (B, d) tensors aligned by entity; temps: (B,) or
    scalar tensor. Negatives are the other entities' positive-view rows;
    the anchor's own positive sits on the diagonal.
    """
    anchors, positives = ad.as_tensor(anchors), ad.as_tensor(positives)
    _count_zero_rows(anchors.data)
    _count_zero_rows(positives.data)
    sims = ad.normalize_rows(anchors) @ _transpose(ad.normalize_rows(positives))
    inv_t = ad.power(temps, -1.0)
    logits = sims * ad.reshape(inv_t, (-1, 1)) if inv_t.data.ndim else sims * inv_t
    pos = _diag(logits)
    return (ad.logsumexp(logits, axis=1) - pos).mean()


def infonce_loss_full(anchors, positives, all_positives, temps):
    """InfoNCE with the denominator over the full entity set (config escape hatch)."""
    anchors, positives = ad.as_tensor(anchors), ad.as_tensor(positives)
    all_positives = ad.as_tensor(all_positives)
    _count_zero_rows(anchors.data)
    _count_zero_rows(all_positives.data)
    sims = ad.normalize_rows(anchors) @ _transpose(ad.normalize_rows(all_positives))
    pos_sims = ad.rowdot(ad.normalize_rows(anchors), ad.normalize_rows(positives))
    inv_t = ad.power(temps, -1.0)
    col = ad.reshape(inv_t, (-1, 1)) if inv_t.data.ndim else inv_t
    return (ad.logsumexp(sims * col, axis=1) - pos_sims * inv_t).mean()


def cl_total(es, bias, users, items, cfg, rule, tau_param=None, rng=None):
    """Total contrastive loss over all ordered behavior pairs, users + beta * items.

    Entities with zero interactions in either paired behavior are dropped
    when the filter is on. Returns a scalar tensor (0 when disabled or K < 2).
    """
    K = es.num_behaviors
    if not cfg.cl_enabled or K < 2:
        return ad.Tensor(0.0)
    if rule.variant == "random":
        # one temperature draw per batch, shared by all pairs
        if rng is None:
            raise ValueError("random temperature needs an rng")
        rule = replace(rule, variant="fixed", tau=float(rng.uniform(rule.lo, rule.hi)))
    users = np.unique(np.asarray(users, dtype=np.int64))
    items = np.unique(np.asarray(items, dtype=np.int64))
    total = ad.Tensor(0.0)
    for kj in range(K):
        for ki in range(K):
            if ki == kj:
                continue
            total = total + _pair_loss(es.user, bias.user_bias, users, ki, kj,
                                       cfg, rule, tau_param, rng)
            if cfg.beta != 0.0:
                item_term = _pair_loss(es.item, bias.item_bias, items, ki, kj,
                                       cfg, rule, tau_param, rng)
                total = total + ad.mul(item_term, cfg.beta)
    return total


def _pair_loss(views, bias_mat, idx, ki, kj, cfg, rule, tau_param, rng):
    if cfg.min_interaction_filter:
        keep = (bias_mat[idx, ki] > 0) & (bias_mat[idx, kj] > 0)
        idx = idx[keep]
    if idx.size == 0:
        return ad.Tensor(0.0)
    anchors = ad.take_rows(views[ki], idx)
    positives = ad.take_rows(views[kj], idx)
    temps = temperature(rule, bias_mat[idx, kj], rng=rng, tau_param=tau_param)
    if cfg.in_batch_negatives:
        return infonce_loss(anchors, positives, temps)
    return infonce_loss_full(anchors, positives, views[kj], temps)


def _transpose(t):
    out_data = t.data.T

    def backward(g):
        t._accumulate(g.T)

    return ad._node(out_data, (t,), backward)


def _diag(t):
    out_data = np.diagonal(t.data).copy()

    def backward(g):
        full = np.zeros_like(t.data)
        np.fill_diagonal(full, g)
        t._accumulate(full)

    return ad._node(out_data, (t,), backward)


def _count_zero_rows(arr):
    z = int(np.count_nonzero((arr * arr).sum(axis=1) == 0.0))
    if z:
        ZERO_NORM_WARNINGS["count"] += z
