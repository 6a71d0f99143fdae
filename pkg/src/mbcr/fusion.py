"""Adaptive aggregation of auxiliary behaviors via dual-path gating.

A structural gate (Jaccard overlap with the target behavior) and a semantic
gate (mixture-of-experts over behavior embeddings and bias proxies) each
weight an auxiliary matching degree; learnable scalars balance the paths.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class MoeGate:
    """Shapes of the gating network: softmax router over 2-layer perceptron experts."""

    input_dim: int          # 2d + 2
    n_experts: int = 4
    hidden: int = 64

    def init_params(self, rng):
        """Weight tables, normal(0, 0.1); biases zero."""
        return {
            "moe_router_w": rng.normal(0.0, 0.1, size=(self.input_dim, self.n_experts)),
            "moe_router_b": np.zeros(self.n_experts),
            "moe_expert_w1": rng.normal(0.0, 0.1, size=(self.n_experts, self.input_dim, self.hidden)),
            "moe_expert_b1": np.zeros((self.n_experts, self.hidden)),
            "moe_expert_w2": rng.normal(0.0, 0.1, size=(self.n_experts, self.hidden)),
            "moe_expert_b2": np.zeros(self.n_experts),
        }

    @staticmethod
    def param_names():
        return ("moe_router_w", "moe_router_b", "moe_expert_w1",
                "moe_expert_b1", "moe_expert_w2", "moe_expert_b2")


@dataclass(frozen=True)
class FusionParams:
    lambda_j_init: float = 0.5
    lambda_m_init: float = 0.5
    jaccard_enabled: bool = True
    moe_enabled: bool = True
    agg_enabled: bool = True


def moe_gate_forward(gate, params, e_u, e_i, b_u, b_i):
    """Semantic gate value per pair: softmax-routed blend of expert outputs.

    e_u, e_i: (B, d) tensors; b_u, b_i: (B,) bias fractions. Returns (B,).
    """
    e_u, e_i = ad.as_tensor(e_u), ad.as_tensor(e_i)
    b_u = ad.reshape(ad.as_tensor(b_u), (-1, 1))
    b_i = ad.reshape(ad.as_tensor(b_i), (-1, 1))
    x = ad.concat([e_u, e_i, b_u, b_i], axis=1)
    if x.shape[1] != gate.input_dim:
        raise ValueError("gate input dim %d, expected %d" % (x.shape[1], gate.input_dim))
    logits = x @ params["moe_router_w"] + params["moe_router_b"]
    probs = ad.softmax(logits, axis=1)
    out = None
    for e in range(gate.n_experts):
        w1 = _expert_slice(params["moe_expert_w1"], e)       # (input_dim, hidden)
        b1 = _expert_slice(params["moe_expert_b1"], e)       # (hidden,)
        w2 = _expert_slice(params["moe_expert_w2"], e)       # (hidden,)
        b2 = _expert_slice(params["moe_expert_b2"], e)       # ()
        h = ad.relu(x @ w1 + b1)
        expert_out = h @ w2 + b2                              # (B,)
        term = _col(probs, e) * expert_out
        out = term if out is None else out + term
    return out


def _expert_slice(t, e):
    t = ad.as_tensor(t)
    out_data = t.data[e]

    def backward(g):
        full = np.zeros_like(t.data)
        full[e] = g
        t._accumulate(full)

    return ad._node(out_data, (t,), backward)


def _col(t, j):
    out_data = t.data[:, j]

    def backward(g):
        full = np.zeros_like(t.data)
        full[:, j] = g
        t._accumulate(full)

    return ad._node(out_data, (t,), backward)


def contribution(f_k, jac, g_moe, lam_j, lam_m, fp):
    """Dual-path contribution of one auxiliary behavior toward the target.

    lam_j * sigmoid(f_k * J) + lam_m * sigmoid(f_k * g_moe); a disabled
    path contributes 0. All inputs may be tensors or plain arrays/scalars.
    """
    f_k = ad.as_tensor(f_k)
    out = None
    if fp.jaccard_enabled:
        out = ad.mul(lam_j, ad.sigmoid(f_k * ad.as_tensor(jac)))
    if fp.moe_enabled:
        term = ad.mul(lam_m, ad.sigmoid(f_k * ad.as_tensor(g_moe)))
        out = term if out is None else out + term
    if out is None:
        out = ad.Tensor(np.zeros_like(f_k.data))
    return out


def total_contribution(cons, fp):
    """Sum of auxiliary contributions; exactly 0 when aggregation is disabled."""
    if not fp.agg_enabled or not cons:
        return ad.Tensor(0.0)
    out = cons[0]
    for c in cons[1:]:
        out = out + c
    return out


def final_score(s_base, c_total):
    """Training score: base score amplified by aggregated contributions."""
    return ad.mul(s_base, ad.as_tensor(c_total) + 1.0)
