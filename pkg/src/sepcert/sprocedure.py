"""Robust contraction certificates under norm-bounded nonlinear coupling.

The network here is the usual monotone one plus an extra coupling term
h(x, t) that is only known through a quadratic bound on its Jacobian:

    (dh/dx)' (dh/dx)  <=  psi^2 H'H        for all x, t,

with H >= 0 elementwise.  A diagonal metric D = diag(d) certifies
contraction at rate lam for *every* admissible h if there is a multiplier
theta > 0 making the S-procedure block matrix

    [ Abar'D + D Abar + 2 lam D + theta psi^2 H'H ,   D      ]
    [ D                                           ,  -theta I ]

negative definite, where Abar is the Metzler comparison matrix of the
nominal network.  (Schur: the block form bounds D(dh/dx) + (dh/dx)'D by
theta (dh/dx)'(dh/dx) + D^2/theta, then applies the gain bound.)

The search is a heuristic -- LP-seeded diagonal, golden-section on the
multiplier, coordinate-wise refinement -- but the returned certificate is
always re-verified by an exact eigenvalue computation, so how (d, theta)
were found never affects soundness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkModel, sup_jacobian_bound
from .optim import sym_eigs
from .positive_lti import certify_positive_lti

LMI_FLAG = "S-procedure LMI repaired form"

THETA_LOG_RANGE = (-6.0, 6.0)
GOLDEN_ITERATIONS = 48
REFINE_BUDGET = 200

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class SProcError(ValueError):
    pass


@dataclass(frozen=True)
class UncertainCoupling:
    """Structure matrix H >= 0 and gain bound psi for the unknown coupling."""

    H: np.ndarray
    psi: float

    def __post_init__(self):
        h = np.array(self.H, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise SProcError(f"H must be square, got shape {h.shape}")
        if not np.all(np.isfinite(h)):
            raise SProcError("H entries must be finite")
        if h.min() < 0.0:
            i, j = np.unravel_index(np.argmin(h), h.shape)
            raise SProcError(f"H[{i},{j}] = {h[i, j]!r} is negative")
        psi = float(self.psi)
        if not math.isfinite(psi) or psi < 0.0:
            raise SProcError(f"psi must be a finite nonnegative real, got {self.psi!r}")
        h.setflags(write=False)
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "psi", psi)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def gram(self) -> np.ndarray:
        """psi^2 H'H, the quadratic bound on (dh/dx)'(dh/dx)."""
        return (self.psi**2) * (self.H.T @ self.H)


@dataclass(frozen=True)
class SProcInfeasible:
    """Why no certificate was produced.

    reason is "certified_infeasible" when a necessary condition rules the
    LMI out for every d, theta, and "budget_exhausted" when the search
    simply failed to find a negative-definite point.
    """

    reason: str
    detail: str = ""
    best: float | None = None  # best LMI eigenvalue seen, if the search ran

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class SProcCertificate:
    """Diagonal metric d, multiplier theta, and the verified LMI margin."""

    d: np.ndarray
    theta: float
    rate: float
    lmi_margin: float
    comparison: np.ndarray = field(repr=False)
    coupling: UncertainCoupling = field(repr=False)
    flags: tuple = (LMI_FLAG,)

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 1 or np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise SProcError("d must be a positive finite vector")
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise SProcError(f"theta must be positive, got {self.theta!r}")
        if self.rate < 0:
            raise SProcError(f"rate must be nonnegative, got {self.rate!r}")
        if not (math.isfinite(self.lmi_margin) and self.lmi_margin > 0):
            raise SProcError(f"lmi_margin must be positive, got {self.lmi_margin!r}")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        top = assemble_lmi(self.comparison, self.coupling, d, self.theta, self.rate)
        lam_max = float(sym_eigs(top).eigenvalues[-1])
        slack = 1e-9 * max(1.0, float(np.abs(top).max()))
        if lam_max > -self.lmi_margin + slack:
            raise SProcError(
                f"stated margin {self.lmi_margin:.6g} not supported: "
                f"LMI eigenvalue {lam_max:.6g}"
            )

    @property
    def n(self) -> int:
        return self.d.shape[0]


def assemble_lmi(abar, u: UncertainCoupling, d, theta: float, rate: float) -> np.ndarray:
    """The 2n x 2n S-procedure block matrix for the given point."""
    a = np.asarray(abar, dtype=float)
    d = np.asarray(d, dtype=float)
    n = a.shape[0]
    if u.n != n or d.shape[0] != n:
        raise SProcError(
            f"size mismatch: comparison {n}, H {u.n}, d {d.shape[0]}"
        )
    dm = np.diag(d)
    q = a.T @ dm + dm @ a + 2.0 * rate * dm + theta * u.gram()
    s = np.zeros((2 * n, 2 * n))
    s[:n, :n] = q
    s[:n, n:] = dm
    s[n:, :n] = dm
    s[n:, n:] = -theta * np.eye(n)
    return s


def _lmi_top(a, gram, d, theta, rate):
    # same as assemble_lmi but without revalidation, for the inner loop
    n = a.shape[0]
    dm = np.diag(d)
    s = np.zeros((2 * n, 2 * n))
    s[:n, :n] = a.T @ dm + dm @ a + 2.0 * rate * dm + theta * gram
    s[:n, n:] = dm
    s[n:, :n] = dm
    s[n:, n:] = -theta * np.eye(n)
    return float(sym_eigs(s).eigenvalues[-1])


def _golden_theta(fn, lo: float, hi: float, iters: int):
    """Golden-section minimum of fn(10**t) over t in [lo, hi]."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(10.0**c), fn(10.0**d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(10.0**c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(10.0**d)
    t = c if fc <= fd else d
    return 10.0**t, min(fc, fd)


def _refine_d(a, gram, d, theta, rate, best, budget):
    """Coordinate-wise multiplicative descent on d at fixed theta."""
    d = d.copy()
    step = 2.0
    used = 0
    while used < budget and step > 1.0 + 1e-3:
        improved = False
        for i in range(d.shape[0]):
            for gamma in (step, 1.0 / step):
                if used >= budget:
                    break
                trial = d.copy()
                trial[i] = min(max(trial[i] * gamma, 1e-9), 1e9)
                val = _lmi_top(a, gram, trial, theta, rate)
                used += 1
                if val < best - 1e-15:
                    d, best = trial, val
                    improved = True
        if not improved:
            step = math.sqrt(step)
    return d, best, used


def certify_uncertain(m: NetworkModel, u: UncertainCoupling, rate: float):
    """Search for a diagonal metric robust to every admissible coupling.

    Returns an SProcCertificate, or an SProcInfeasible explaining whether
    the instance is provably infeasible or the search budget ran out.
    Raises NotMonotoneError / UnboundedDerivativeError if the nominal
    model has no comparison matrix.
    """
    if rate < 0 or not math.isfinite(rate):
        raise SProcError(f"rate must be a finite nonnegative real, got {rate!r}")
    abar = sup_jacobian_bound(m)
    if u.n != abar.n:
        raise SProcError(f"H is {u.n}x{u.n} but the network has {abar.n} nodes")
    a = abar.entries
    gram = u.gram()

    # Necessary conditions, checked before any search.  Diagonal entries of
    # the Schur complement give 2 d_i (a_ii + rate) + theta*gram_ii +
    # d_i^2/theta < 0; minimizing over theta > 0 leaves
    # a_ii + rate + sqrt(gram_ii) < 0 with no free parameters.
    head = np.diag(a) + rate + np.sqrt(np.diag(gram))
    if head.max() >= 0.0:
        i = int(np.argmax(head))
        return SProcInfeasible(
            "certified_infeasible",
            f"diagonal necessary condition fails at node {i}: "
            f"Abar[{i},{i}] + rate + psi*||H col|| = {head[i]:.6g} >= 0",
        )
    shifted = certify_positive_lti(a + rate * np.eye(abar.n))
    if shifted is None:
        return SProcInfeasible(
            "certified_infeasible",
            "comparison matrix plus rate shift is not Hurwitz, so even the "
            "zero coupling defeats every diagonal metric",
        )

    d0 = shifted.d / shifted.d.max()
    evaluations = 0

    def phi(theta):
        nonlocal evaluations
        evaluations += 1
        return _lmi_top(a, gram, d0, theta, rate)

    theta, best = _golden_theta(phi, *THETA_LOG_RANGE, GOLDEN_ITERATIONS)
    d, best, used = _refine_d(a, gram, d0, theta, rate, best, REFINE_BUDGET)
    evaluations += used
    if used:  # d moved; retune the multiplier once more

        def phi2(th):
            nonlocal evaluations
            evaluations += 1
            return _lmi_top(a, gram, d, th, rate)

        theta2, best2 = _golden_theta(phi2, *THETA_LOG_RANGE, GOLDEN_ITERATIONS)
        if best2 < best:
            theta, best = theta2, best2

    if best >= 0.0:
        return SProcInfeasible(
            "budget_exhausted",
            f"best LMI eigenvalue {best:.6g} after {evaluations} evaluations",
            best=best,
        )
    return SProcCertificate(
        d=d,
        theta=theta,
        rate=float(rate),
        lmi_margin=-best,
        comparison=a,
        coupling=u,
    )


def sample_adversarial_h(u: UncertainCoupling, seed) -> np.ndarray:
    """Random constant Jacobian Delta with Delta'Delta <= psi^2 H'H.

    Draws Delta = U psi diag(s) W with U random orthogonal, s uniform on
    [0, 1]^n, and W the symmetric polar factor of H; the bound is checked
    by an eigenvalue computation before returning.
    """
    n = u.n
    if u.psi == 0.0:
        return np.zeros((n, n))
    eig = sym_eigs(u.H.T @ u.H)
    w = eig.vectors @ np.diag(np.sqrt(np.maximum(eig.eigenvalues, 0.0))) @ eig.vectors.T
    rng = np.random.default_rng(seed)
    qmat, r = np.linalg.qr(rng.normal(size=(n, n)))
    qmat = qmat * np.sign(np.diag(r))
    s = rng.uniform(0.0, 1.0, size=n)
    delta = qmat @ (u.psi * np.diag(s)) @ w
    gram = u.gram()
    for _ in range(8):
        excess = float(sym_eigs(delta.T @ delta - gram).eigenvalues[-1])
        if excess <= 1e-12:
            return delta
        delta = delta * (1.0 - 1e-7)  # shave roundoff from the boundary
    raise SProcError(f"adversarial sample violates the gain bound by {excess:.3g}")
