"""Decentralized tracking control from a diagonal contraction metric.

A diagonal metric sum m_i dx_i^2 becomes Euclidean after the per-node
change of coordinates z_i(x_i) = integral of theta_i from the anchor to
x_i, theta_i = sqrt(m_i).  Geodesics in z are straight segments, so the
squared distance V = |z - z*|^2 to a target solution is a control
Lyapunov function with an explicit first variation, and the smallest
input enforcing dV/dt <= -2 lam V is a one-constraint quadratic program
with a closed form.

theta_i is constant when the metric comes from a certificate; a
state-dependent theta_i supplied by the user is handled by panel
quadrature (z) and bisection (x).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkModel
from .separable_metric import SeparableCertificate
from .simulator import DEFAULT_STEP, Trajectory, _model_rhs, integrate

PANELS = 4000
GL_POINTS = 8
BISECTION_STEPS = 80


class ControllerError(ValueError):
    pass


class UncontrollableDirection(RuntimeError):
    """The decay constraint is active but the input cannot act on it."""


class _ThetaTable:
    """Cumulative quadrature of a positive scalar weight on [lo, hi]."""

    def __init__(self, fn, lo: float, hi: float, panels: int = PANELS):
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ControllerError(f"bad interval [{lo}, {hi}]")
        self.fn = fn
        self.lo, self.hi = float(lo), float(hi)
        self.edges = np.linspace(self.lo, self.hi, panels + 1)
        nodes, wts = np.polynomial.legendre.leggauss(GL_POINTS)
        self._gl = (nodes, wts)
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        half = 0.5 * (self.edges[1] - self.edges[0])
        samples = fn(mid[:, None] + half * nodes[None, :])
        if np.min(samples) <= 0.0 or not np.all(np.isfinite(samples)):
            raise ControllerError("theta must be positive and finite on the domain")
        panel_area = half * samples @ wts
        cum = np.concatenate([[0.0], np.cumsum(panel_area)])
        anchor = 0.0 if self.lo <= 0.0 <= self.hi else self.lo
        k = int(np.searchsorted(self.edges, anchor, side="right") - 1)
        k = min(max(k, 0), panels - 1)
        offset = cum[k] + self._partial(self.edges[k], anchor)
        self.cum = cum - offset

    def _partial(self, a, b):
        # Gauss-Legendre on [a, b]; a, b may be arrays
        nodes, wts = self._gl
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        vals = self.fn(mid[..., None] + half[..., None] * nodes)
        return half * (vals @ wts)

    def z(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1,
                    0, self.edges.shape[0] - 2)
        return self.cum[k] + self._partial(self.edges[k], x)

    def x(self, z):
        z = np.asarray(z, dtype=float)
        lo = np.full(z.shape, self.lo)
        hi = np.full(z.shape, self.hi)
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            below = self.z(mid) < z
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def theta(self, x):
        return self.fn(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CoordinateChange:
    """Per-node monotone maps z_i(x_i) with derivative theta_i > 0."""

    rate: float
    scales: np.ndarray | None = None  # constant theta_i, exact algebra
    tables: tuple = ()

    def __post_init__(self):
        if self.scales is not None:
            s = np.array(self.scales, dtype=float)
            if s.ndim != 1 or np.any(s <= 0) or not np.all(np.isfinite(s)):
                raise ControllerError("scales must be a positive vector")
            s.setflags(write=False)
            object.__setattr__(self, "scales", s)
        elif not self.tables:
            raise ControllerError("need either constant scales or theta tables")
        if self.rate < 0 or not math.isfinite(self.rate):
            raise ControllerError(f"rate must be nonnegative, got {self.rate!r}")

    @property
    def n(self) -> int:
        return self.scales.shape[0] if self.scales is not None else len(self.tables)

    @staticmethod
    def from_functions(thetas, lo, hi, rate: float = 0.0,
                       panels: int = PANELS) -> "CoordinateChange":
        """Tabulate user-supplied positive weight functions on [lo, hi]."""
        los = np.broadcast_to(np.asarray(lo, dtype=float), (len(thetas),))
        his = np.broadcast_to(np.asarray(hi, dtype=float), (len(thetas),))
        tables = tuple(_ThetaTable(f, a, b, panels)
                       for f, a, b in zip(thetas, los, his))
        return CoordinateChange(rate=rate, tables=tables)

    def _per_node(self, x, op):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ControllerError(f"state has {x.shape[-1]} coords, expected {self.n}")
        out = np.empty_like(x, dtype=float)
        for i, tab in enumerate(self.tables):
            out[..., i] = getattr(tab, op)(x[..., i])
        return out

    def theta(self, x):
        """theta_i evaluated at x_i, for a state vector or a batch."""
        if self.scales is not None:
            return np.broadcast_to(self.scales, np.shape(x)).copy()
        return self._per_node(x, "theta")

    def z_of_x(self, x):
        if self.scales is not None:
            return np.asarray(x, dtype=float) * self.scales
        return self._per_node(x, "z")

    def x_of_z(self, z):
        if self.scales is not None:
            return np.asarray(z, dtype=float) / self.scales
        return self._per_node(z, "x")


def build_coordinates(cert: SeparableCertificate) -> CoordinateChange:
    """Euclidean coordinates for a diagonal-metric certificate."""
    if cert.kind != "diagonal_quadratic":
        raise ControllerError(
            f"coordinates need a diagonal_quadratic certificate, got {cert.kind!r}"
        )
    return CoordinateChange(rate=cert.rate, scales=np.sqrt(cert.weights))


@dataclass(frozen=True)
class ClfEvaluation:
    """V = |z - z*|^2 and its first variation split by input channel.

    Along the closed loop, dV/dt = Vdot_drift + Vdot_input_gain @ (u - ustar);
    the tracking constraint is dV/dt <= -required_decay.
    """

    V: float
    Vdot_drift: float
    Vdot_input_gain: np.ndarray
    required_decay: float
    ustar: np.ndarray = field(repr=False)


def clf_eval(m: NetworkModel, cc: CoordinateChange, x, xstar, ustar,
             t: float) -> ClfEvaluation:
    """Evaluate the tracking CLF at one state/target/time triple."""
    if m.input_matrix is None:
        raise ControllerError("model has no input matrix")
    x = np.asarray(x, dtype=float)
    xstar = np.asarray(xstar, dtype=float)
    ustar = np.asarray(ustar, dtype=float)
    if x.shape != (m.n,) or xstar.shape != (m.n,):
        raise ControllerError(f"states must have shape ({m.n},)")
    if ustar.shape != (m.input_matrix.shape[1],):
        raise ControllerError(
            f"ustar must have shape ({m.input_matrix.shape[1]},), got {ustar.shape}"
        )
    if not (m.in_box(x) and m.in_box(xstar)):
        warnings.warn("state or target outside the model domain box")

    rhs = _model_rhs(m)
    fx = rhs(x[None, :], t)[0]
    fs = rhs(xstar[None, :], t)[0] + m.input_matrix @ ustar
    z = cc.z_of_x(x)
    zs = cc.z_of_x(xstar)
    err = z - zs
    v = float(err @ err)
    zdot = cc.theta(x) * fx
    zsdot = cc.theta(xstar) * fs
    # drift includes the ustar feedthrough on the plant side, so the input
    # gain multiplies the deviation u - ustar
    a = float(2.0 * err @ (zdot + cc.theta(x) * (m.input_matrix @ ustar) - zsdot))
    b = 2.0 * (err * cc.theta(x)) @ m.input_matrix
    return ClfEvaluation(V=v, Vdot_drift=a, Vdot_input_gain=b,
                         required_decay=2.0 * cc.rate * v, ustar=ustar)


def min_norm_feedback(e: ClfEvaluation) -> np.ndarray:
    """Smallest input meeting the decay constraint (closed-form QP).

    Returns ustar when the drift already decays fast enough; otherwise
    corrects along the constraint gradient.  Raises UncontrollableDirection
    when the constraint is violated but the gain row is zero.
    """
    gap = e.Vdot_drift + e.required_decay
    if gap <= 0.0:
        return e.ustar.copy()
    b = e.Vdot_input_gain
    bb = float(b @ b)
    if bb <= 1e-30:
        raise UncontrollableDirection(
            f"decay constraint misses the input range by {gap:.6g}"
        )
    return e.ustar - (gap / bb) * b


@dataclass(frozen=True)
class LocalityReport:
    """Which state indices each node's control constraint reads."""

    reads: tuple
    channel_nodes: tuple  # node actuated by each input column


def locality_report(m: NetworkModel, cc: CoordinateChange) -> LocalityReport:
    """Sparsity of the per-node CLF terms: own state plus coupling row."""
    B = m.input_matrix
    if B is None:
        raise ControllerError("model has no input matrix")
    if cc.n != m.n:
        raise ControllerError("coordinate change does not match the model")
    channels = []
    for c in range(B.shape[1]):
        rows = np.flatnonzero(B[:, c])
        if rows.shape[0] != 1:
            raise ControllerError(
                f"input column {c} actuates {rows.shape[0]} nodes; "
                "per-node actuation required"
            )
        channels.append(int(rows[0]))
    mask = np.abs(m.coupling.matrices).max(axis=0) > 0.0
    reads = tuple(
        tuple(sorted({i} | set(np.flatnonzero(mask[i]).tolist())))
        for i in range(m.n)
    )
    return LocalityReport(reads=reads, channel_nodes=tuple(channels))


def _series(times, values):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if times.ndim != 1 or values.shape[0] != times.shape[0]:
        raise ControllerError("target series must align times with rows")

    def at(t):
        return np.array([np.interp(t, times, values[:, j])
                         for j in range(values.shape[1])])

    return at


def tracking_controller(m: NetworkModel, cc: CoordinateChange, times, xstar,
                        ustar=None):
    """Feedback u(x, t) tracking an interpolated target trajectory."""
    if m.input_matrix is None:
        raise ControllerError("model has no input matrix")
    n_in = m.input_matrix.shape[1]
    xs_at = _series(times, xstar)
    if ustar is None:
        ustar = np.zeros((np.asarray(times).shape[0], n_in))
    us_at = _series(times, ustar)

    def u(X, t):
        xs = xs_at(t)
        us = us_at(t)
        rows = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((rows.shape[0], n_in))
        for r in range(rows.shape[0]):
            out[r] = min_norm_feedback(clf_eval(m, cc, rows[r], xs, us, t))
        return out if np.ndim(X) == 2 else out[0]

    return u


def track(m: NetworkModel, cc: CoordinateChange, x0, times, xstar, ustar=None,
          *, h: float = DEFAULT_STEP, t_span=None) -> Trajectory:
    """Closed-loop simulation of the min-norm tracking feedback."""
    u = tracking_controller(m, cc, times, xstar, ustar)
    return integrate(m, x0, u, h=h, t_span=t_span)
