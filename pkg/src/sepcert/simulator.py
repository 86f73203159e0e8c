"""Trajectory integration and empirical checks of the certified properties.

Classical fixed-step RK4 (reproducible grids; local error watched by a
step-halving comparison every 100 steps).  The integrator core is batched:
a whole family of initial conditions advances as one (batch, n) array, which
is what makes the order-preservation and contraction property runs cheap.

`measure_contraction` takes any certificate object with `kind`, `weights`
and `rate` attributes (kinds: diagonal_quadratic / sum_l1 / max_linf) and
fits the observed decay exponent of the weighted distance between trajectory
pairs.  `virtual_system_certify` re-integrates the factored linear system
ẏ = N(x(t), t) y along each sampled solution and checks y reproduces x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .expr import Expr, Interval, compile_scalar, compile_vec, parse
from .model import NetworkModel
from .optim import MetzlerMatrix
from .positive_lti import certify_positive_lti

__all__ = [
    "SimulationError",
    "Trajectory",
    "FactoredSystem",
    "integrate",
    "check_order_preservation",
    "OrderReport",
    "measure_contraction",
    "ContractionReport",
    "virtual_system_certify",
    "VirtualReport",
    "weighted_distance",
    "trajectory_to_csv",
]

DEFAULT_STEP = 1e-3
AUDIT_EVERY = 100
AUDIT_WARN = 1e-6
MAX_WARNINGS = 20


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray  # (T,)
    states: np.ndarray  # (T, n)
    step: float
    method: str = "RK4"
    warnings: tuple = ()
    audit_error: float = 0.0  # worst step-halving discrepancy seen

    def __post_init__(self):
        self.times.setflags(write=False)
        self.states.setflags(write=False)
        if np.any(np.diff(self.times) <= 0):
            raise SimulationError("trajectory times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _rk4_step(rhs, X, t, h):
    k1 = rhs(X, t)
    k2 = rhs(X + 0.5 * h * k1, t + 0.5 * h)
    k3 = rhs(X + 0.5 * h * k2, t + 0.5 * h)
    k4 = rhs(X + h * k3, t + h)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _model_rhs(m: NetworkModel, u=None):
    fns = [compile_scalar(nd.g) for nd in m.nodes]
    sched = m.coupling
    B = m.input_matrix

    def rhs(X, t):
        out = X @ sched.at(t).T
        for i, f in enumerate(fns):
            out[..., i] += f(X[..., i], t)
        if u is not None:
            out = out + np.asarray(u(X, t)) @ B.T
        return out

    return rhs


def _grid(t0: float, tf: float, h: float):
    span = tf - t0
    n_full = int(math.floor(span / h + 1e-9))
    rem = span - n_full * h
    steps = [h] * n_full
    if rem > 1e-12 * max(1.0, abs(span)):
        steps.append(rem)
    if not steps:
        raise SimulationError(f"horizon [{t0}, {tf}] shorter than one step h={h}")
    times = t0 + np.concatenate([[0.0], np.cumsum(steps)])
    times[-1] = tf
    return times, steps


def _run(rhs, X0, t0, tf, h, box=None, on_step=None, store=True):
    """Advance X0 (batch, n) with fixed-step RK4; returns (times, states or None,
    warnings, audit_error).  The step-halving audit never alters the trajectory."""
    X = np.array(X0, dtype=float)
    times, steps = _grid(t0, tf, h)
    out = np.empty((len(times),) + X.shape) if store else None
    if store:
        out[0] = X
    warnings = []
    audit_error = 0.0
    exited = False
    if on_step is not None:
        on_step(times[0], X)
    with np.errstate(all="ignore"):  # overflow surfaces as the non-finite error
        for k, hk in enumerate(steps):
            t = times[k]
            Xf = _rk4_step(rhs, X, t, hk)
            if k % AUDIT_EVERY == 0:
                Xh = _rk4_step(rhs, _rk4_step(rhs, X, t, 0.5 * hk),
                               t + 0.5 * hk, 0.5 * hk)
                err = float(np.max(np.abs(Xf - Xh))) if np.all(np.isfinite(Xh)) else math.inf
                audit_error = max(audit_error, err)
                if err > AUDIT_WARN and len(warnings) < MAX_WARNINGS:
                    warnings.append(f"step-halving discrepancy {err:.3e} at t={t:.6g}")
            X = Xf
            if not np.all(np.isfinite(X)):
                raise SimulationError(f"non-finite state at t={times[k + 1]:.6g}")
            if box is not None and not exited:
                lo, hi = box
                if np.any(X < lo - 1e-9) or np.any(X > hi + 1e-9):
                    exited = True
                    warnings.append(
                        f"trajectory left the domain box at t={times[k + 1]:.6g}")
            if store:
                out[k + 1] = X
            if on_step is not None:
                on_step(times[k + 1], X)
    return times, out, warnings, audit_error


def integrate(m: NetworkModel, x0, u=None, *, h: float = DEFAULT_STEP,
              t_span=None) -> Trajectory:
    """Integrate one trajectory of the model (optionally closed-loop via u(x, t))."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (m.n,):
        raise SimulationError(f"x0 must have shape ({m.n},), got {x0.shape}")
    if h <= 0:
        raise SimulationError("step must be positive")
    if u is not None and m.input_matrix is None:
        raise SimulationError("feedback given but the model has no input matrix")
    t0, tf = t_span if t_span is not None else m.horizon
    times, states, warns, audit = _run(
        _model_rhs(m, u), x0[None, :], t0, tf, h, box=(m.box_lo, m.box_hi))
    return Trajectory(times=times, states=states[:, 0, :], step=h,
                      warnings=tuple(warns), audit_error=audit)


# ---------------------------------------------------------------------------
# order preservation


@dataclass(frozen=True)
class OrderReport:
    max_violation: float
    pairs: int
    worst: tuple  # (pair index, time, coordinate)

    @property
    def preserved(self) -> bool:
        return self.max_violation <= 1e-7


def check_order_preservation(m: NetworkModel, pairs: int = 100, seed: int = 0,
                             *, h: float = DEFAULT_STEP, t_span=None) -> OrderReport:
    """Integrate random ordered pairs xa(0) <= xb(0); report the largest
    elementwise violation max(xa_i(t) - xb_i(t)) over the grid."""
    rng = np.random.default_rng(seed)
    lo, hi = m.box_lo, m.box_hi
    xa = rng.uniform(lo, hi, (pairs, m.n))
    xb = xa + rng.uniform(0.1, 1.0, (pairs, m.n)) * (hi - xa)
    X0 = np.concatenate([xa, xb], axis=0)
    t0, tf = t_span if t_span is not None else m.horizon

    worst = {"v": -np.inf, "at": (0, t0, 0)}

    def on_step(t, X):
        gap = X[:pairs] - X[pairs:]
        k = int(np.argmax(gap))
        v = float(gap.flat[k])
        if v > worst["v"]:
            worst["v"] = v
            worst["at"] = (k // m.n, t, k % m.n)

    _run(_model_rhs(m), X0, t0, tf, h, on_step=on_step, store=False)
    return OrderReport(max_violation=worst["v"], pairs=pairs, worst=worst["at"])


# ---------------------------------------------------------------------------
# contraction measurement


def weighted_distance(kind: str, weights, diff) -> np.ndarray:
    """Separable distance of a state difference; diff may be batched (..., n)."""
    w = np.asarray(weights, dtype=float)
    diff = np.asarray(diff, dtype=float)
    if kind == "diagonal_quadratic":
        return np.sqrt(np.sum(w * diff * diff, axis=-1))
    if kind == "sum_l1":
        return np.sum(w * np.abs(diff), axis=-1)
    if kind == "max_linf":
        return np.max(w * np.abs(diff), axis=-1)
    raise ValueError(f"unknown metric kind {kind!r}")


@dataclass(frozen=True)
class ContractionReport:
    worst_rate: float
    rates: tuple
    skipped: int
    window: tuple
    certified_rate: float

    @property
    def passed(self) -> bool:
        return self.worst_rate >= self.certified_rate - 0.05 * self.certified_rate


def fit_decay_rate(times, dists, window) -> Optional[float]:
    """Least-squares slope of log d(t) on the window; None if degenerate."""
    times = np.asarray(times, dtype=float)
    dists = np.asarray(dists, dtype=float)
    mask = (times >= window[0]) & (times <= window[1]) & (dists > 0.0)
    if mask.sum() < 2:
        return None
    tt = times[mask]
    ld = np.log(dists[mask])
    slope = np.polyfit(tt, ld, 1)[0]
    return -float(slope)


def measure_contraction(m: NetworkModel, cert, pairs: int = 20, seed: int = 0,
                        *, h: float = 1e-2, t_span=None) -> ContractionReport:
    """Fit the decay exponent of the certified weighted distance between
    random trajectory pairs; transients are skipped by fitting on
    [t0 + 0.1 (tf - t0), tf]."""
    rng = np.random.default_rng(seed)
    lo, hi = m.box_lo, m.box_hi
    xa = rng.uniform(lo, hi, (pairs, m.n))
    xb = rng.uniform(lo, hi, (pairs, m.n))
    t0, tf = t_span if t_span is not None else m.horizon
    window = (t0 + 0.1 * (tf - t0), tf)

    dists = []

    def on_step(t, X):
        dists.append(weighted_distance(cert.kind, cert.weights, X[:pairs] - X[pairs:]))

    times, _, _, _ = _run(_model_rhs(m), np.concatenate([xa, xb]), t0, tf, h,
                          on_step=on_step, store=False)
    D = np.stack(dists, axis=0)  # (T, pairs)
    rates = []
    skipped = 0
    for j in range(pairs):
        if D[0, j] < 1e-12:
            skipped += 1
            continue
        r = fit_decay_rate(times, D[:, j], window)
        if r is None:
            skipped += 1
        else:
            rates.append(r)
    worst = min(rates) if rates else math.nan
    return ContractionReport(worst_rate=worst, rates=tuple(rates), skipped=skipped,
                             window=window, certified_rate=float(cert.rate))


# ---------------------------------------------------------------------------
# virtual (factored) systems


class FactoredSystem:
    """ẋ = N(x, t) x with every entry of N an expression over x1..xn and t."""

    def __init__(self, entries, box: Sequence[Interval], horizon):
        n = len(box)
        if len(entries) != n or any(len(row) != n for row in entries):
            raise ValueError(f"N must be {n}x{n} to match the box")
        self.entries = tuple(
            tuple(e if isinstance(e, Expr) else parse(e, state_dim=n) for e in row)
            for row in entries
        )
        self.box = tuple(box)
        t0, tf = float(horizon[0]), float(horizon[1])
        if not t0 < tf:
            raise ValueError(f"bad horizon [{t0}, {tf}]")
        self.horizon = (t0, tf)
        self._fns = [[compile_vec(e) for e in row] for row in self.entries]

    @property
    def n(self) -> int:
        return len(self.box)

    def matrix_at(self, X, t):
        """N evaluated at states X (..., n) and times t (broadcastable)."""
        X = np.asarray(X, dtype=float)
        shape = X.shape[:-1]
        A = np.empty(shape + (self.n, self.n))
        for i in range(self.n):
            for j in range(self.n):
                A[..., i, j] = self._fns[i][j](X, t)
        return A

    def rhs(self, X, t):
        return np.einsum("...ij,...j->...i", self.matrix_at(X, t), X)


@dataclass(frozen=True)
class SampleCertificate:
    x0: np.ndarray
    weights: np.ndarray  # diagonal metric entries m_i
    decay: float
    dominating: np.ndarray


@dataclass(frozen=True)
class VirtualReport:
    samples: tuple
    failure: Optional[tuple]  # (kind, detail) or None
    max_y_deviation: float
    sample_count: int
    step: float

    @property
    def certified(self) -> bool:
        return self.failure is None


def _hermite_midpoints(times, X, F):
    """Cubic Hermite value at each interval midpoint from grid states/derivatives."""
    h = np.diff(times)[:, None, None] if X.ndim == 3 else np.diff(times)[:, None]
    x0, x1 = X[:-1], X[1:]
    f0, f1 = F[:-1], F[1:]
    # standard cubic Hermite basis at s = 1/2
    return 0.5 * (x0 + x1) + 0.125 * h * (f0 - f1)


def virtual_system_certify(fs: FactoredSystem, x0_samples: int = 5, seed: int = 0,
                           *, h: float = 2.5e-3) -> VirtualReport:
    """Sample solutions x(t), certify the frozen LTV family along each, and
    check the re-integrated virtual state y (with y(0) = x(0)) reproduces x."""
    rng = np.random.default_rng(seed)
    n = fs.n
    t0, tf = fs.horizon
    X0 = np.stack([
        np.array([iv.sample(rng.random()) for iv in fs.box]) for _ in range(x0_samples)
    ])
    times, states, _, _ = _run(fs.rhs, X0, t0, tf, h)  # (T, s, n)
    T = len(times)

    A = fs.matrix_at(states, times[:, None])  # (T, s, n, n)
    # positivity of the factor: off-diagonals must be nonnegative wherever sampled
    off = A.copy()
    idx = np.arange(n)
    off[..., idx, idx] = 0.0
    if off.min() < 0.0:
        k, s, i, j = np.unravel_index(int(np.argmin(off)), off.shape)
        return VirtualReport(
            samples=(), sample_count=x0_samples, step=h, max_y_deviation=math.nan,
            failure=("positivity_violation",
                     f"N[{i},{j}] = {A[k, s, i, j]:.6g} < 0 at t={times[k]:.6g} "
                     f"on sample {s}"))

    # virtual re-integration: the factor frozen along x(t), midpoints by Hermite
    F = np.einsum("tsij,tsj->tsi", A, states)
    X_mid = _hermite_midpoints(times, states, F)
    A_mid = fs.matrix_at(X_mid, 0.5 * (times[:-1] + times[1:])[:, None])
    Y = states[0].copy()
    max_dev = 0.0
    for k in range(T - 1):
        hk = times[k + 1] - times[k]
        k1 = np.einsum("sij,sj->si", A[k], Y)
        k2 = np.einsum("sij,sj->si", A_mid[k], Y + 0.5 * hk * k1)
        k3 = np.einsum("sij,sj->si", A_mid[k], Y + 0.5 * hk * k2)
        k4 = np.einsum("sij,sj->si", A[k + 1], Y + hk * k3)
        Y = Y + (hk / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        max_dev = max(max_dev, float(np.max(np.abs(Y - states[k + 1]))))

    samples = []
    for s in range(x0_samples):
        Abar = A[:, s].max(axis=0)
        cert = certify_positive_lti(MetzlerMatrix(Abar))
        if cert is None:
            return VirtualReport(
                samples=tuple(samples), sample_count=x0_samples, step=h,
                max_y_deviation=max_dev,
                failure=("domination_not_hurwitz",
                         f"dominating matrix for sample {s} is not Hurwitz"))
        samples.append(SampleCertificate(x0=X0[s], weights=cert.d, decay=cert.decay,
                                         dominating=Abar))
    return VirtualReport(samples=tuple(samples), sample_count=x0_samples, step=h,
                         max_y_deviation=max_dev, failure=None)


# ---------------------------------------------------------------------------
# output


def trajectory_to_csv(traj: Trajectory, fh) -> None:
    """Write t, x1..xn rows; header included."""
    header = "t," + ",".join(f"x{i + 1}" for i in range(traj.n))
    fh.write(header + "\n")
    for t, row in zip(traj.times, traj.states):
        fh.write(f"{t:.12g}," + ",".join(f"{v:.12g}" for v in row) + "\n")
