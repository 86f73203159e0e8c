"""Separable Lyapunov certificates for Hurwitz Metzler matrices.

For a Hurwitz Metzler matrix A three separable certificates exist and are
constructed here by linear programming:

* sum weights ``p`` with A^T p < 0:          V_p(x) = sum_i p_i |x_i|
* max weights ``q`` with A (1/q) < 0:        V_q(x) = max_i q_i |x_i|
* diagonal quadratic weights ``d = p o q``:  V_d(x) = sum_i d_i x_i^2

The max weights are reciprocals of a right comparison vector xi (A xi < 0);
that convention is what makes the product d = p o q a valid diagonal
quadratic weight: with D = diag(p/xi), the congruence
diag(xi) (A^T D + D A) diag(xi) is a symmetric Metzler matrix whose i-th row
sum equals xi_i (A^T p)_i + p_i (A xi)_i < 0, hence strictly diagonally
dominant with negative diagonal, hence negative definite.  (Taking q = xi
itself breaks this: e.g. A = [[-2, 0.1], [10, -2]] admits no p, xi in the LP
cones with diag(p o xi) negative-definite.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import MetzlerMatrix, is_negdef, strict_positive_lp

__all__ = [
    "PositiveCertificate",
    "WeightDecayReport",
    "certify_positive_lti",
    "verify_diagonal_metric",
    "verify_weight_decay",
]

BISECTION_ITERATIONS = 40


@dataclass(frozen=True)
class PositiveCertificate:
    """Separable Lyapunov weights for a Hurwitz Metzler matrix.

    decay is the largest rate lambda_d with A^T D + D A + 2 lambda_d D <= 0
    certified by bisection (D = diag(d)).
    """

    p: np.ndarray
    q: np.ndarray
    d: np.ndarray
    decay: float


@dataclass(frozen=True)
class WeightDecayReport:
    """Decay margins of the sum/max weight pair on the orthant.

    margin_sum = min_i -(A^T p)_i;  margin_max = min_i -(A (1/q))_i, i.e. the
    margin of the right comparison vector associated with the max weights.
    Both positive means V_p and V_q are valid Lyapunov functions.
    """

    margin_sum: float
    margin_max: float

    @property
    def valid(self) -> bool:
        return self.margin_sum > 0.0 and self.margin_max > 0.0


def _metzler(A) -> np.ndarray:
    if isinstance(A, MetzlerMatrix):
        return A.entries
    return MetzlerMatrix(A).entries


def certify_positive_lti(A) -> PositiveCertificate | None:
    """Construct (p, q, d, decay) for a Metzler matrix; None if not Hurwitz.

    For Metzler matrices the strict LP is feasible iff A is Hurwitz, so the
    LP verdict doubles as the stability test.
    """
    a = _metzler(A)
    p = strict_positive_lp(a)
    if p is None:
        return None
    xi = strict_positive_lp(a.T)
    if xi is None:  # cannot happen for Metzler A (Hurwitz iff both feasible)
        return None
    q = 1.0 / xi
    d = p * q

    dm = np.diag(d)
    base = a.T @ dm + dm @ a
    hi = float(np.abs(np.diag(a)).max())

    def decays_at(lam: float) -> bool:
        return is_negdef(base + 2.0 * lam * dm, 0.0)

    if decays_at(hi):
        decay = hi
    else:
        lo = 0.0
        for _ in range(BISECTION_ITERATIONS):
            mid = 0.5 * (lo + hi)
            if decays_at(mid):
                lo = mid
            else:
                hi = mid
        decay = lo
    return PositiveCertificate(p=p, q=q, d=d, decay=decay)


def verify_diagonal_metric(A, d, lam: float) -> bool:
    """True iff A^T D + D A + 2 lam D is negative semidefinite (D = diag(d)).

    A may be any square real matrix (used to re-check certificates under
    perturbations), d must be positive, lam >= 0.
    """
    a = np.asarray(A, dtype=float)
    d = np.asarray(d, dtype=float)
    if lam < 0:
        raise ValueError("rate must be nonnegative")
    if d.ndim != 1 or d.shape[0] != a.shape[0] or np.any(d <= 0):
        raise ValueError("d must be a positive vector matching A")
    dm = np.diag(d)
    return is_negdef(a.T @ dm + dm @ a + 2.0 * lam * dm, 0.0)


def verify_weight_decay(A, p, q) -> WeightDecayReport:
    """Margins of the sum weights p and max weights q on a Metzler matrix."""
    a = _metzler(A)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p <= 0) or np.any(q <= 0):
        raise ValueError("weights must be positive")
    margin_sum = float(np.min(-(a.T @ p)))
    margin_max = float(np.min(-(a @ (1.0 / q))))
    return WeightDecayReport(margin_sum=margin_sum, margin_max=margin_max)
