"""Networked models: scalar node dynamics plus linear coupling.

A NetworkModel is  dx_i/dt = g_i(x_i, t) + sum_j K_ij(t) x_j  (+ B u), with
each node's dynamics an Expr over its own scalar state, a declared domain box
per node, and K either constant or a piecewise-constant schedule.  Domain
boxes are what make the worst-case Jacobian bound certifiable by interval
arithmetic; certificates are semi-global (valid on the box), and simulation
warns when trajectories leave it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .expr import (
    Expr,
    Interval,
    compile_scalar,
    diff_x,
    eval_interval,
    evaluate,
    parse,
)
from .optim import MetzlerMatrix

__all__ = [
    "ModelError",
    "NotMonotoneError",
    "UnboundedDerivativeError",
    "NodeSpec",
    "CouplingSchedule",
    "NetworkModel",
    "JacobianSample",
    "MonotoneReport",
    "check_monotone",
    "jacobian_at",
    "jacobian_batch",
    "sup_jacobian_bound",
    "node_derivative_interval",
]

TIME_GRID = 1001  # default sampling resolution along the horizon


class ModelError(ValueError):
    pass


class NotMonotoneError(ModelError):
    """Operation requires nonnegative off-diagonal coupling."""

    def __init__(self, violations):
        self.violations = violations
        first = violations[0]
        super().__init__(
            f"model is not monotone: K[{first[0]},{first[1]}] = {first[3]!r} "
            f"at t = {first[2]!r}" + (f" (+{len(violations) - 1} more)" if len(violations) > 1 else "")
        )


class UnboundedDerivativeError(ModelError):
    """No finite sup of a node derivative over its box."""


@dataclass(frozen=True)
class NodeSpec:
    """One scalar node: name, dynamics g(x, t), domain box."""

    name: str
    g: Expr
    domain: Interval

    def __post_init__(self):
        diff_x(self.g)  # must differentiate; raises otherwise

    @staticmethod
    def from_source(name: str, source: str, lo: float, hi: float) -> "NodeSpec":
        return NodeSpec(name=name, g=parse(source), domain=Interval(lo, hi))


class CouplingSchedule:
    """Piecewise-constant coupling K(t): matrices[k] active on [times[k], times[k+1])."""

    def __init__(self, times: Sequence[float], matrices):
        t = np.asarray(times, dtype=float)
        mats = np.asarray(matrices, dtype=float)
        if t.ndim != 1 or len(t) == 0:
            raise ModelError("schedule needs at least one breakpoint")
        if np.any(np.diff(t) <= 0):
            raise ModelError("schedule breakpoints must be strictly increasing")
        if mats.ndim != 3 or mats.shape[0] != len(t) or mats.shape[1] != mats.shape[2]:
            raise ModelError(f"schedule matrices must be (k, n, n), got {mats.shape}")
        if not np.all(np.isfinite(mats)):
            raise ModelError("coupling entries must be finite")
        self.times = t
        self.matrices = mats
        self.matrices.setflags(write=False)

    @staticmethod
    def constant(K) -> "CouplingSchedule":
        K = np.asarray(K, dtype=float)
        return CouplingSchedule([0.0], K[None, :, :])

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    @property
    def is_constant(self) -> bool:
        return len(self.times) == 1

    def index_at(self, t) -> np.ndarray:
        """Piece index active at time(s) t (clamped at the ends)."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(idx, 0, len(self.times) - 1)

    def at(self, t: float) -> np.ndarray:
        return self.matrices[int(self.index_at(t))]

    def pieces_over(self, t0: float, tf: float) -> np.ndarray:
        """Matrices of all pieces intersecting [t0, tf]."""
        first = int(self.index_at(t0))
        last = int(self.index_at(tf))
        return self.matrices[first : last + 1]


@dataclass(eq=False)
class NetworkModel:
    nodes: tuple
    coupling: CouplingSchedule
    horizon: tuple
    input_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        if len(self.nodes) < 1:
            raise ModelError("need at least one node")
        names = [nd.name for nd in self.nodes]
        if len(set(names)) != len(names):
            raise ModelError("node names must be unique")
        n = len(self.nodes)
        if self.coupling.n != n:
            raise ModelError(
                f"coupling is {self.coupling.n}x{self.coupling.n} but there are {n} nodes"
            )
        t0, tf = self.horizon
        if not (np.isfinite(t0) and np.isfinite(tf) and t0 < tf):
            raise ModelError(f"bad horizon [{t0}, {tf}]")
        self.horizon = (float(t0), float(tf))
        if self.input_matrix is not None:
            B = np.asarray(self.input_matrix, dtype=float)
            if B.ndim != 2 or B.shape[0] != n:
                raise ModelError(f"input matrix must have {n} rows, got shape {B.shape}")
            if not np.all(np.isfinite(B)):
                raise ModelError("input matrix entries must be finite")
            self.input_matrix = B

    @staticmethod
    def build(nodes, coupling, horizon, input_matrix=None) -> "NetworkModel":
        if not isinstance(coupling, CouplingSchedule):
            coupling = CouplingSchedule.constant(coupling)
        return NetworkModel(
            nodes=tuple(nodes),
            coupling=coupling,
            horizon=(float(horizon[0]), float(horizon[1])),
            input_matrix=input_matrix,
        )

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def names(self):
        return [nd.name for nd in self.nodes]

    @property
    def box_lo(self) -> np.ndarray:
        return np.array([nd.domain.lo for nd in self.nodes])

    @property
    def box_hi(self) -> np.ndarray:
        return np.array([nd.domain.hi for nd in self.nodes])

    def coupling_at(self, t: float) -> np.ndarray:
        return self.coupling.at(t)

    def in_box(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.box_lo - slack) and np.all(x <= self.box_hi + slack))


@dataclass(frozen=True)
class JacobianSample:
    point: tuple  # (x, t)
    matrix: np.ndarray


@dataclass(frozen=True)
class MonotoneReport:
    is_monotone: bool
    violations: list  # (i, j, t_piece_start, value) for K_ij < 0, i != j


def check_monotone(m: NetworkModel) -> MonotoneReport:
    """Off-diagonal Jacobian entries are K_ij(t); report any negative ones."""
    bad = []
    for k, K in enumerate(m.coupling.matrices):
        t_piece = float(m.coupling.times[k])
        off = K - np.diag(np.diag(K))
        for i, j in zip(*np.nonzero(off < 0)):
            bad.append((int(i), int(j), t_piece, float(K[i, j])))
    return MonotoneReport(is_monotone=not bad, violations=bad)


def jacobian_at(m: NetworkModel, x, t: float) -> JacobianSample:
    """Exact Jacobian at a point: K(t) plus dg_i/dx_i on the diagonal."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.n,):
        raise ModelError(f"state must have shape ({m.n},), got {x.shape}")
    J = m.coupling.at(t).copy()
    for i, nd in enumerate(m.nodes):
        J[i, i] += evaluate(diff_x(nd.g), float(x[i]), float(t))
    return JacobianSample(point=(x.copy(), float(t)), matrix=J)


def jacobian_batch(m: NetworkModel, X: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Jacobians at many points at once, shape (len(ts), n, n); fast path."""
    X = np.asarray(X, dtype=float)
    ts = np.asarray(ts, dtype=float)
    idx = m.coupling.index_at(ts)
    J = m.coupling.matrices[idx].copy()
    for i, nd in enumerate(m.nodes):
        f = compile_scalar(diff_x(nd.g))
        with np.errstate(all="ignore"):
            J[:, i, i] += f(X[:, i], ts)
    return J


def node_derivative_interval(nd: NodeSpec, box: Interval, tbox: Interval) -> Interval:
    """Certified enclosure of dg/dx over box x tbox."""
    return eval_interval(diff_x(nd.g), box, tbox)


def sup_jacobian_bound(m: NetworkModel) -> MetzlerMatrix:
    """Worst-case comparison matrix: diagonal derivative sups plus max coupling.

    Sound domination: every in-box Jacobian sample is elementwise <= the
    returned matrix.  Requires a monotone model (otherwise the off-diagonals
    would not be Metzler); raises NotMonotoneError / UnboundedDerivativeError.
    """
    rep = check_monotone(m)
    if not rep.is_monotone:
        raise NotMonotoneError(rep.violations)
    t0, tf = m.horizon
    pieces = m.coupling.pieces_over(t0, tf)
    Kmax = pieces.max(axis=0)
    tbox = Interval(t0, tf)
    Abar = Kmax.copy()
    for i, nd in enumerate(m.nodes):
        iv = node_derivative_interval(nd, nd.domain, tbox)
        if not np.isfinite(iv.hi):
            raise UnboundedDerivativeError(
                f"no finite derivative sup for node {nd.name!r} on {nd.domain}"
            )
        Abar[i, i] = iv.hi + Kmax[i, i]
    return MetzlerMatrix(Abar)
