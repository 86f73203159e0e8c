"""Small-gain composition of local storage certificates.

Each node carries a scalar quadratic storage V_i = w_i * delta_i^2 whose
sampled differential dissipation obeys dV_i/dt <= sum_j alpha_ij V_j with a
Metzler, negative-diagonal gain matrix alpha.  If z' = alpha z is stable,
positive left/right vectors give network Lyapunov functions
V_sum = sum_i p_i V_i and V_max = max_i V_i / q_i.

Vector conventions: p satisfies alpha' p < 0 and q satisfies alpha q < 0
(both checked exactly); the max-separable weights are the reciprocals 1/q_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expr import diff_x, free_variables
from .model import NetworkModel, jacobian_batch
from .optim import strict_positive_lp
from .separable_metric import Failure

__all__ = [
    "GainMatrix",
    "CompositeWeights",
    "compose",
    "audit_gains",
    "INFLATION",
]

INFLATION = 0.05  # safety factor on sampled (non-constant) gain entries


class GainMatrix:
    """Metzler matrix with strictly negative diagonal."""

    def __init__(self, alpha, provenance: Optional[dict] = None):
        a = np.array(alpha, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"gain matrix must be square, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("gain entries must be finite")
        d = np.diag(a)
        if np.any(d >= 0):
            i = int(np.argmax(d))
            raise ValueError(f"alpha[{i},{i}] = {d[i]} must be negative")
        off = a - np.diag(d)
        if off.min() < 0:
            i, j = np.unravel_index(int(np.argmin(off)), a.shape)
            raise ValueError(f"alpha[{i},{j}] = {a[i, j]} must be nonnegative")
        a.setflags(write=False)
        self.alpha = a
        self.provenance = provenance or {}

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.array(self.alpha, dtype=dtype)

    def __repr__(self):
        return f"GainMatrix({self.alpha.tolist()})"


@dataclass(frozen=True)
class CompositeWeights:
    p: np.ndarray   # alpha' p < 0
    q: np.ndarray   # alpha q < 0
    decay: float
    margin_p: float
    margin_q: float

    def __post_init__(self):
        for name in ("p", "q"):
            v = np.asarray(getattr(self, name), dtype=float)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
            if np.any(v <= 0):
                raise ValueError(f"{name} must be strictly positive")

    def check(self, alpha) -> bool:
        a = np.asarray(alpha, dtype=float)
        return bool(np.all(a.T @ self.p < 0) and np.all(a @ self.q < 0))


def compose(H: GainMatrix):
    """Left/right positive vectors for the gain matrix, or Failure("unstable").

    decay is a certified lower bound on the rate of both composite storages:
    each margin (elementwise slack of the defining inequality) normalized by
    the largest weight of its vector.
    """
    if not isinstance(H, GainMatrix):
        H = GainMatrix(H)
    a = H.alpha
    p = strict_positive_lp(a)
    q = strict_positive_lp(a.T)
    if p is None or q is None:
        return Failure("unstable", "no strictly positive vector certifies the "
                                   "gain matrix")
    margin_p = float(np.min(-(a.T @ p)))
    margin_q = float(np.min(-(a @ q)))
    decay = min(margin_p / float(p.max()), margin_q / float(q.max()))
    return CompositeWeights(p=p, q=q, decay=decay,
                            margin_p=margin_p, margin_q=margin_q)


def audit_gains(m: NetworkModel, V_weights=1.0, samples: int = 10000,
                seed: int = 0):
    """Estimate the gain matrix for storages V_i = w_i delta_i^2 by sampling.

    alpha_ii = sup 2 J_ii and alpha_ij = sup 2 |J_ij| sqrt(w_j / w_i) over
    in-box Jacobian samples.  Entries whose expression is exactly constant
    (constant derivative, constant coupling) are taken at face value; sampled
    entries are widened by the 5% safety factor.  Returns a GainMatrix or
    Failure("diagonal_not_negative").
    """
    n = m.n
    w = np.asarray(V_weights, dtype=float)
    if w.ndim == 0:
        w = np.full(n, float(w))
    if w.shape != (n,) or np.any(w <= 0):
        raise ValueError(f"V_weights must be a positive vector of length {n}")

    rng = np.random.default_rng(seed)
    X = rng.uniform(m.box_lo, m.box_hi, (samples, n))
    ts = rng.uniform(m.horizon[0], m.horizon[1], samples)
    J = jacobian_batch(m, X, ts)

    scale = np.sqrt(w[None, :] / w[:, None])
    alpha = 2.0 * np.abs(J).max(axis=0) * scale
    idx = np.arange(n)
    alpha[idx, idx] = 2.0 * J[:, idx, idx].max(axis=0)

    # entries that are exactly constant need no sampling slack; the rest get
    # widened away from -inf by the safety factor
    K_const = m.coupling.is_constant
    diag_exact = np.array([not free_variables(diff_x(nd.g)) for nd in m.nodes]) & K_const
    exact = np.full((n, n), K_const)
    exact[idx, idx] = diag_exact
    alpha = np.where(exact, alpha, alpha + INFLATION * np.abs(alpha))

    d = alpha[idx, idx]
    if np.any(d >= 0):
        i = int(np.argmax(d))
        return Failure("diagonal_not_negative",
                       f"alpha[{i},{i}] = {d[i]:.6g} for node {m.nodes[i].name!r}")
    return GainMatrix(alpha, provenance={
        "samples": samples, "seed": seed, "inflation": INFLATION,
        "inflated_diagonal": [not bool(b) for b in diag_exact],
        "inflated_offdiagonal": not K_const,
        "weights": w.tolist(),
    })
