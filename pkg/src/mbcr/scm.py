"""Discrete structural causal model used as a numeric backdoor-adjustment witness.

The graph has hidden confounders B_u, B_i with edges B_u->U, B_i->I,
{B_u,B_i,U,I}->M and {M,U,I}->Y. All variables are finite, so both the
interventional distribution (enumerating the mutilated model with U and I
clamped) and the backdoor estimate (observational tables only) can be
computed exactly and compared.
"""

from dataclasses import dataclass

import numpy as np

ATOL = 1e-12


@dataclass
class DiscreteScm:
    """Conditional probability tables for the six-variable confounded graph.

    Axis conventions:
        p_bu:         (nbu,)                  P(B_u)
        p_bi:         (nbi,)                  P(B_i)
        p_u_given_bu: (nbu, nu)               P(U | B_u)
        p_i_given_bi: (nbi, ni)               P(I | B_i)
        p_m:          (nbu, nbi, nu, ni, nm)  P(M | B_u, B_i, U, I)
        p_y:          (nm, nu, ni, ny)        P(Y | M, U, I)
    """

    p_bu: np.ndarray
    p_bi: np.ndarray
    p_u_given_bu: np.ndarray
    p_i_given_bi: np.ndarray
    p_m: np.ndarray
    p_y: np.ndarray

    @property
    def card(self):
        nbu, nbi, nu, ni, nm = self.p_m.shape
        return (nbu, nbi, nu, ni, nm, self.p_y.shape[-1])

    def validate(self):
        for name, table, axis in [("p_bu", self.p_bu, 0), ("p_bi", self.p_bi, 0),
                                  ("p_u_given_bu", self.p_u_given_bu, -1),
                                  ("p_i_given_bi", self.p_i_given_bi, -1),
                                  ("p_m", self.p_m, -1), ("p_y", self.p_y, -1)]:
            if np.any(table < 0):
                raise ValueError("%s has negative entries" % name)
            sums = table.sum(axis=axis)
            if np.max(np.abs(sums - 1.0)) > ATOL:
                raise ValueError("%s slices do not sum to 1" % name)
        if any(c < 2 for c in self.card):
            raise ValueError("all cardinalities must be >= 2, got %r" % (self.card,))


def _normalize(raw, axis=-1):
    return raw / raw.sum(axis=axis, keepdims=True)


def build_random_scm(card, seed):
    """Random CPTs (strictly positive, normalized) for the given cardinalities."""
    if len(card) != 6 or any(c < 2 for c in card):
        raise ValueError("card must be six values >= 2, got %r" % (card,))
    nbu, nbi, nu, ni, nm, ny = card
    rng = np.random.default_rng(seed)

    def draw(shape):
        return _normalize(rng.random(shape) + 0.05)

    scm = DiscreteScm(
        p_bu=draw((nbu,)),
        p_bi=draw((nbi,)),
        p_u_given_bu=draw((nbu, nu)),
        p_i_given_bi=draw((nbi, ni)),
        p_m=draw((nbu, nbi, nu, ni, nm)),
        p_y=draw((nm, nu, ni, ny)),
    )
    scm.validate()
    return scm


def interventional_distribution(scm, u, i):
    """P(Y | do(U=u), do(I=i)) by enumerating the mutilated model.

    Severing B_u->U and B_i->I and clamping U, I leaves the joint
    P(B_u) P(B_i) P(M | B_u,B_i,u,i) P(Y | M,u,i); marginalize everything
    but Y.
    """
    nbu, nbi, nu, ni, nm, ny = scm.card
    _check_range(u, nu, "u")
    _check_range(i, ni, "i")
    # joint over (bu, bi, m, y) in the mutilated graph, marginalized to y
    joint = np.einsum("a,b,abm,my->abmy", scm.p_bu, scm.p_bi,
                      scm.p_m[:, :, u, i, :], scm.p_y[:, u, i, :])
    return joint.sum(axis=(0, 1, 2))


def backdoor_estimate(scm, u, i):
    """Backdoor adjustment from observational tables only.

    sum_{B_i} P(B_i) sum_{B_u} P(B_u) sum_m P(Y|M=m,u,i) P(M=m|B_u,B_i,u,i).
    """
    nbu, nbi, nu, ni, nm, ny = scm.card
    _check_range(u, nu, "u")
    _check_range(i, ni, "i")
    out = np.zeros(ny)
    for bi in range(nbi):
        inner = np.zeros(ny)
        for bu in range(nbu):
            acc = np.zeros(ny)
            for m in range(nm):
                acc += scm.p_y[m, u, i, :] * scm.p_m[bu, bi, u, i, m]
            inner += scm.p_bu[bu] * acc
        out += scm.p_bi[bi] * inner
    return out


def max_backdoor_deviation(scm):
    """Largest |backdoor - interventional| over all (u, i) pairs."""
    _, _, nu, ni, _, _ = scm.card
    worst = 0.0
    for u in range(nu):
        for i in range(ni):
            dev = np.max(np.abs(backdoor_estimate(scm, u, i)
                                - interventional_distribution(scm, u, i)))
            worst = max(worst, dev)
    return worst


def _check_range(v, n, name):
    if not 0 <= v < n:
        raise ValueError("%s=%d out of range [0, %d)" % (name, v, n))
