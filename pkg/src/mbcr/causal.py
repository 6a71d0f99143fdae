"""Training-time causal scoring: bias factors, debiased base scores, inference score.

The bias factor multiplies the matching degree only while training; the
inference score is the plain target-behavior inner product, so rankings
served at inference never depend on the bias proxies.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DebiasParams:
    gamma_u: float = 0.1
    gamma_i: float = 0.01
    eps_b: float = 1e-3
    user_bias_enabled: bool = True
    item_bias_enabled: bool = True

    def __post_init__(self):
        if self.eps_b <= 0:
            raise ValueError("eps_b must be > 0")
        if self.gamma_u < 0 or self.gamma_i < 0:
            raise ValueError("bias exponents must be >= 0")


def bias_factor(b_u, b_i, p):
    """g = (b_u + eps)^gamma_u * (b_i + eps)^gamma_i, disabled sides contribute 1.

    Inputs are bias-proxy fractions (scalars or arrays); the factor is a
    training-time constant, so plain numpy suffices.
    """
    g = 1.0
    if p.user_bias_enabled:
        g = g * (np.asarray(b_u, dtype=np.float64) + p.eps_b) ** p.gamma_u
    if p.item_bias_enabled:
        g = g * (np.asarray(b_i, dtype=np.float64) + p.eps_b) ** p.gamma_i
    if np.ndim(g) == 0:
        return float(g)
    return g


def base_score(f_k, g_k):
    """Debiased base score: matching degree scaled by the bias factor."""
    return f_k * g_k


def inference_score(es, u, i, target_index=-1):
    """Ranking score: inner product of target-behavior embeddings, bias-free."""
    return float(es.user[target_index].data[u] @ es.item[target_index].data[i])


def inference_matrix(es, target_index):
    """All-pairs inference scores (M, N) for the target behavior."""
    return es.user[target_index].data @ es.item[target_index].data.T
