"""Separable contraction certificates for monotone networks.

Pipeline: bound the network Jacobian by the comparison Metzler matrix
(derivative sups plus max coupling), certify that matrix with strictly
positive weight vectors, and carry the diagonal metric back to the nonlinear
system.  The transfer is sound because an in-box Jacobian differs from the
comparison matrix only by nonpositive diagonal slack, which can only help
the matrix inequality and the weighted-distance decay.

Certificates come in three kinds sharing one container:
  diagonal_quadratic  V(delta) = sum_i d_i delta_i^2        rate from the LMI
  sum_l1              V(delta) = sum_i p_i |delta_i|        rate min_i -(A'p)_i/p_i
  max_linf            V(delta) = max_i q_i |delta_i|        rate min_i -(A xi)_i/xi_i,
                      with xi = 1/q (the certificate stores q, the metric weights).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expr import Interval
from .model import (
    NetworkModel,
    UnboundedDerivativeError,
    check_monotone,
    jacobian_batch,
    node_derivative_interval,
    sup_jacobian_bound,
    TIME_GRID,
)
from .optim import MetzlerMatrix
from .positive_lti import certify_positive_lti, verify_diagonal_metric
from .simulator import SimulationError, integrate

__all__ = [
    "Failure",
    "CertificateError",
    "CertificateProvenance",
    "SeparableCertificate",
    "certify_network",
    "alternate_kinds",
    "pointwise_lmi_audit",
    "AuditReport",
    "local_metric_along_trajectory",
    "sum_decay",
    "max_decay",
]

KINDS = ("diagonal_quadratic", "sum_l1", "max_linf")
SCOPES = ("global_box", "trajectory_tube")


@dataclass(frozen=True)
class Failure:
    """Named obstruction; falsy so callers can branch on the result directly."""

    reason: str
    detail: str = ""

    def __bool__(self) -> bool:
        return False


class CertificateError(ValueError):
    """Certificate fields inconsistent with the stored comparison matrix."""


def sum_decay(A, p) -> float:
    """Decay rate of sum_i p_i |delta_i| under delta' = M delta for any M
    elementwise dominated by the Metzler matrix A."""
    A = np.asarray(A, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(np.min(-(A.T @ p) / p))


def max_decay(A, q) -> float:
    """Decay rate of max_i q_i |delta_i| under the same domination."""
    A = np.asarray(A, dtype=float)
    xi = 1.0 / np.asarray(q, dtype=float)
    return float(np.min(-(A @ xi) / xi))


@dataclass(frozen=True)
class CertificateProvenance:
    comparison: np.ndarray
    p: np.ndarray
    q: np.ndarray
    margin_sum: float
    margin_max: float
    want_rate: Optional[float] = None
    want_rate_satisfied: Optional[bool] = None
    tube: Optional[tuple] = None  # (x0, radius) for trajectory_tube scope
    flags: tuple = ()

    def __post_init__(self):
        for name in ("comparison", "p", "q"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class SeparableCertificate:
    kind: str
    weights: np.ndarray
    rate: float
    scope: str
    provenance: CertificateProvenance

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CertificateError(f"unknown kind {self.kind!r}")
        if self.scope not in SCOPES:
            raise CertificateError(f"unknown scope {self.scope!r}")
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise CertificateError("weights must be strictly positive and finite")
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise CertificateError(f"rate must be positive, got {self.rate}")
        A = self.provenance.comparison
        if self.kind == "diagonal_quadratic":
            ok = verify_diagonal_metric(A, w, self.rate)
        elif self.kind == "sum_l1":
            ok = sum_decay(A, w) >= self.rate - 1e-12
        else:
            ok = max_decay(A, w) >= self.rate - 1e-12
        if not ok:
            raise CertificateError(
                f"{self.kind} weights do not certify rate {self.rate} "
                "on the stored comparison matrix")


def _provenance(Abar, cert0, want_rate, tube=None, flags=()) -> CertificateProvenance:
    A = np.asarray(Abar, dtype=float)
    margin_sum = float(np.min(-(A.T @ cert0.p)))
    margin_max = float(np.min(-(A @ (1.0 / cert0.q))))
    satisfied = None if want_rate is None else bool(cert0.decay >= want_rate - 1e-12)
    return CertificateProvenance(
        comparison=A.copy(), p=cert0.p, q=cert0.q,
        margin_sum=margin_sum, margin_max=margin_max,
        want_rate=want_rate, want_rate_satisfied=satisfied,
        tube=tube, flags=tuple(flags))


def certify_network(m: NetworkModel, want_rate: Optional[float] = None):
    """Certify contraction of the model on its domain box.

    Returns a diagonal_quadratic SeparableCertificate at the best certified
    rate (want_rate, when given, is recorded as satisfied or not rather than
    truncating the result), or a falsy Failure naming the obstruction.
    """
    rep = check_monotone(m)
    if not rep.is_monotone:
        i, j, t, v = rep.violations[0]
        return Failure("not_monotone", f"K[{i},{j}] = {v} at t = {t}")
    try:
        Abar = sup_jacobian_bound(m)
    except UnboundedDerivativeError as e:
        return Failure("no_finite_sup", str(e))
    cert0 = certify_positive_lti(Abar)
    if cert0 is None:
        return Failure("comparison_not_hurwitz",
                       "no strictly positive weight vector exists for the "
                       "comparison matrix")
    if cert0.decay <= 0:
        return Failure("comparison_not_hurwitz", "certified decay is numerically zero")
    return SeparableCertificate(
        kind="diagonal_quadratic", weights=cert0.d, rate=cert0.decay,
        scope="global_box", provenance=_provenance(Abar, cert0, want_rate))


def alternate_kinds(cert: SeparableCertificate) -> dict:
    """The sum- and max-weighted certificates implied by the stored vectors."""
    pr = cert.provenance
    A = pr.comparison
    out = {}
    rs = sum_decay(A, pr.p)
    if rs > 0:
        out["sum_l1"] = SeparableCertificate(
            kind="sum_l1", weights=pr.p, rate=rs, scope=cert.scope, provenance=pr)
    rm = max_decay(A, pr.q)
    if rm > 0:
        out["max_linf"] = SeparableCertificate(
            kind="max_linf", weights=pr.q, rate=rm, scope=cert.scope, provenance=pr)
    return out


@dataclass(frozen=True)
class AuditReport:
    max_eig: float
    worst_point: tuple  # (x, t)
    samples: int
    rate: float

    @property
    def sound(self) -> bool:
        return self.max_eig <= 1e-9


def pointwise_lmi_audit(m: NetworkModel, cert: SeparableCertificate,
                        samples: int = 10000, seed: int = 0,
                        rate: Optional[float] = None) -> AuditReport:
    """Sample in-box Jacobians and report max lambda_max(J'D + DJ + 2*lam*D).

    Independent numerical check of the transfer step: nonpositive (up to
    eigensolver tolerance) confirms the certificate pointwise.  `rate`
    overrides the certified rate, e.g. to demonstrate failure at an inflated
    one.
    """
    if cert.kind != "diagonal_quadratic":
        raise CertificateError("pointwise audit applies to diagonal_quadratic only")
    lam = cert.rate if rate is None else float(rate)
    rng = np.random.default_rng(seed)
    w = cert.weights
    best = (-np.inf, None)
    t0, tf = m.horizon
    chunk = 2048
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        X = rng.uniform(m.box_lo, m.box_hi, (b, m.n))
        ts = rng.uniform(t0, tf, b)
        J = jacobian_batch(m, X, ts)
        E = w[None, :, None] * J  # D @ J batched
        S = E + E.transpose(0, 2, 1)
        S[:, np.arange(m.n), np.arange(m.n)] += 2.0 * lam * w
        top = np.linalg.eigvalsh(S)[:, -1]
        k = int(np.argmax(top))
        if top[k] > best[0]:
            best = (float(top[k]), (X[k].copy(), float(ts[k])))
        done += b
    return AuditReport(max_eig=best[0], worst_point=best[1], samples=samples, rate=lam)


def local_metric_along_trajectory(m: NetworkModel, x0, tube_radius: float,
                                  want_rate: Optional[float] = None,
                                  *, h: float = 1e-3):
    """Certificate valid on a tube of given radius around one trajectory.

    Interval-evaluates the derivative sups over the moving boxes
    [x_i(t) - r, x_i(t) + r] sampled along the integrated trajectory and
    widened to the elementwise max, then certifies like certify_network.
    """
    if not tube_radius > 0:
        return Failure("tube_unbounded", "tube radius must be positive")
    rep = check_monotone(m)
    if not rep.is_monotone:
        i, j, t, v = rep.violations[0]
        return Failure("not_monotone", f"K[{i},{j}] = {v} at t = {t}")
    x0 = np.asarray(x0, dtype=float)
    if not m.in_box(x0):
        return Failure("tube_unbounded", "initial state outside the domain box")
    try:
        traj = integrate(m, x0, h=h)
    except SimulationError as e:
        return Failure("tube_unbounded", f"trajectory did not stay bounded: {e}")
    exit_warn = [w for w in traj.warnings if "left the domain box" in w]
    if exit_warn:
        return Failure("tube_unbounded", exit_warn[0])

    # subsample the integration grid to the reporting grid
    T = len(traj.times)
    idx = np.unique(np.linspace(0, T - 1, min(TIME_GRID, T)).round().astype(int))
    t0, tf = m.horizon
    pieces = m.coupling.pieces_over(t0, tf)
    Abar = pieces.max(axis=0)
    r = float(tube_radius)
    for i, nd in enumerate(m.nodes):
        sup_i = -np.inf
        for a, k in enumerate(idx):
            xk = float(traj.states[k, i])
            t_hi = float(traj.times[idx[a + 1]]) if a + 1 < len(idx) else float(traj.times[k])
            iv = node_derivative_interval(
                nd, Interval(xk - r, xk + r), Interval(float(traj.times[k]), t_hi))
            sup_i = max(sup_i, iv.hi)
        if not np.isfinite(sup_i):
            return Failure("no_finite_sup",
                           f"no finite derivative sup for node {nd.name!r} on the tube")
        Abar[i, i] += sup_i
    cert0 = certify_positive_lti(MetzlerMatrix(Abar))
    if cert0 is None or cert0.decay <= 0:
        return Failure("comparison_not_hurwitz",
                       "tube comparison matrix is not Hurwitz")
    return SeparableCertificate(
        kind="diagonal_quadratic", weights=cert0.d, rate=cert0.decay,
        scope="trajectory_tube",
        provenance=_provenance(Abar, cert0, want_rate, tube=(x0.copy(), r)))
