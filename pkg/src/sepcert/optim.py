"""Numerical kernel: strict-feasibility LP, symmetric eigenvalues, definiteness.

Self-contained on purpose — certificates produced by this toolkit are built by
code that can be audited end to end.  numpy.linalg appears only on the test /
audit side, never in certificate construction.

The LP is solved by a bounded-variable primal simplex with Bland's rule
(anti-cycling); instances are tiny (n up to a few hundred), so numerical
simplicity beats interior-point methods.  Eigenvalues come from cyclic Jacobi
rotations, adequate for the documented size cap n <= 64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

__all__ = [
    "MetzlerMatrix",
    "SymEig",
    "OptimError",
    "LpCyclingError",
    "SizeCapError",
    "strict_positive_lp",
    "sym_eigs",
    "is_negdef",
]

JACOBI_SIZE_CAP = 64


class OptimError(RuntimeError):
    """Numerical failure in the kernel."""


class LpCyclingError(OptimError):
    """Simplex exceeded its iteration budget; distinct from infeasibility."""


class SizeCapError(OptimError):
    """Matrix exceeds the documented eigensolver size cap."""


class MetzlerMatrix:
    """Square real matrix with nonnegative off-diagonal entries."""

    __slots__ = ("_entries",)

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        off = a - np.diag(np.diag(a))
        if off.min() < 0.0:
            i, j = np.unravel_index(np.argmin(off), a.shape)
            raise ValueError(
                f"negative off-diagonal entry a[{i},{j}] = {a[i, j]!r}; not Metzler"
            )
        a.setflags(write=False)
        self._entries = a

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def n(self) -> int:
        return self._entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.array(self._entries, dtype=dtype)

    def __repr__(self):
        return f"MetzlerMatrix({self._entries.tolist()!r})"


@dataclass(frozen=True)
class SymEig:
    """Full symmetric eigendecomposition with a certified residual."""

    eigenvalues: np.ndarray  # ascending
    vectors: np.ndarray  # columns, matching order
    residual: float  # max_k ||S v_k - w_k v_k||_2
    sweeps: int
    offdiag_norm: float  # Frobenius norm of the rotated matrix's off-diagonal


# ---------------------------------------------------------------------------
# bounded-variable primal simplex
#
# max mu  s.t.  A^T p + mu*1 + s = 0,  1 <= p <= cap,  |mu| <= M,  s >= 0.
# Starting point p = 1, mu = -M puts all slacks at feasible nonnegative
# values, so no phase-1 is needed.

_AT_LB, _AT_UB, _BASIC = 0, 1, 2


def _solve_margin_lp(A: np.ndarray, cap: float, piv_tol: float = 1e-10):
    """Returns (p_raw, mu_raw). Raises LpCyclingError on budget exhaustion."""
    n = A.shape[0]
    nv = 2 * n + 1  # p (n), mu, slacks (n)
    maxabs = max(1.0, float(np.abs(A).max()))
    big = (1.0 + n * maxabs) * cap

    E = np.hstack([A.T, np.ones((n, 1)), np.eye(n)])
    c = np.zeros(nv)
    c[n] = 1.0
    lb = np.concatenate([np.ones(n), [-big], np.zeros(n)])
    ub = np.concatenate([np.full(n, cap), [big], np.full(n, np.inf)])

    basis = np.arange(n + 1, nv)
    status = np.full(nv, _AT_LB, dtype=np.int8)
    status[basis] = _BASIC
    vals = lb.copy()
    T = E.copy()  # inv(B) @ E; B starts as the identity (slack basis)
    xB = -E[:, : n + 1] @ vals[: n + 1]

    max_iter = 200 * nv + 2000
    for _ in range(max_iter):
        r = c - c[basis] @ T
        enter = -1
        direction = 0
        for j in range(nv):  # Bland: first improving index
            if status[j] == _AT_LB and r[j] > piv_tol:
                enter, direction = j, 1
                break
            if status[j] == _AT_UB and r[j] < -piv_tol:
                enter, direction = j, -1
                break
        if enter < 0:
            break

        w = direction * T[:, enter]
        span = ub[enter] - lb[enter]
        step = span
        rows = []
        tie = 1e-12 * (1.0 + abs(step) if np.isfinite(step) else 1.0)
        for i in range(n):
            if w[i] > piv_tol:
                d_i = (xB[i] - lb[basis[i]]) / w[i]
                hit = _AT_LB
            elif w[i] < -piv_tol:
                bi = ub[basis[i]]
                if not np.isfinite(bi):
                    continue
                d_i = (xB[i] - bi) / w[i]
                hit = _AT_UB
            else:
                continue
            d_i = max(d_i, 0.0)
            if d_i < step - tie:
                step, rows = d_i, [(i, hit)]
                tie = 1e-12 * (1.0 + abs(step))
            elif d_i <= step + tie:
                rows.append((i, hit))

        if not rows:
            # entering variable swings to its opposite bound; basis unchanged
            if not np.isfinite(span):
                raise LpCyclingError("LP step unbounded; numerical failure")
            xB -= w * span
            status[enter] = _AT_UB if direction > 0 else _AT_LB
            vals[enter] = ub[enter] if direction > 0 else lb[enter]
            continue

        # Bland tie-break: smallest leaving variable index
        row, hit = min(rows, key=lambda rh: basis[rh[0]])
        piv = T[row, enter]
        if abs(piv) <= piv_tol:
            raise LpCyclingError("degenerate pivot; numerical failure")

        leaving = basis[row]
        xB -= w * step
        vals[leaving] = lb[leaving] if hit == _AT_LB else ub[leaving]
        status[leaving] = hit
        x_enter = (lb[enter] if status[enter] == _AT_LB else ub[enter]) + direction * step

        T[row] = T[row] / piv
        col = T[:, enter].copy()
        col[row] = 0.0
        T -= np.outer(col, T[row])
        basis[row] = enter
        status[enter] = _BASIC
        xB[row] = x_enter
    else:
        raise LpCyclingError(f"simplex exceeded {max_iter} iterations")

    full = vals.copy()
    full[basis] = xB
    return full[:n], float(full[n])


def strict_positive_lp(A, *, cap: float = 1e6, tol: float = 1e-9):
    """Positive vector p with A^T p strictly negative, or None.

    Solves max mu s.t. A^T p <= -mu*1, 1 <= p <= cap, and declares
    infeasibility when the optimal mu is <= tol.  The returned vector is
    normalized by its smallest entry (so min(p) == 1); reported margins are
    those of the returned vector.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    p, mu = _solve_margin_lp(A, cap)
    if mu <= tol:
        return None
    return p / p.min()


# ---------------------------------------------------------------------------
# cyclic Jacobi eigensolver


@njit(cache=True)
def _jacobi_kernel(A, V, tol):  # pragma: no cover - exercised via sym_eigs
    n = A.shape[0]
    sweeps = 0
    for _ in range(100):
        off2 = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off2 += A[p, q] * A[p, q]
        if math.sqrt(2.0 * off2) <= tol:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                cth = 1.0 / math.sqrt(1.0 + t * t)
                sth = t * cth
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = cth * akp - sth * akq
                    A[k, q] = sth * akp + cth * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = cth * apk - sth * aqk
                    A[q, k] = sth * apk + cth * aqk
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = cth * vkp - sth * vkq
                    V[k, q] = sth * vkp + cth * vkq
    off2 = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            off2 += A[p, q] * A[p, q]
    return sweeps, math.sqrt(2.0 * off2)


def sym_eigs(S) -> SymEig:
    """Full spectrum of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized internally (it must be symmetric to within
    1e-12 relative); size cap n <= 64.  Termination: off-diagonal Frobenius
    norm <= 1e-12 * max(1, ||S||_F).
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    n = S.shape[0]
    if n > JACOBI_SIZE_CAP:
        raise SizeCapError(f"n = {n} exceeds the Jacobi size cap {JACOBI_SIZE_CAP}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix entries must be finite")
    asym = float(np.abs(S - S.T).max())
    scale = max(1.0, float(np.abs(S).max()))
    if asym > 1e-12 * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:g})")
    S0 = 0.5 * (S + S.T)

    work = S0.copy()
    V = np.eye(n)
    tol = 1e-12 * max(1.0, float(np.linalg.norm(S0)))
    sweeps, off = _jacobi_kernel(work, V, tol)
    if off > tol:
        raise OptimError(f"Jacobi did not converge (off-diagonal norm {off:g})")

    w = np.diag(work).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    V = V[:, order]
    resid = float(np.linalg.norm(S0 @ V - V * w, axis=0).max())
    return SymEig(eigenvalues=w, vectors=V, residual=resid, sweeps=sweeps, offdiag_norm=off)


def is_negdef(S, margin: float) -> bool:
    """True iff lambda_max(S) <= -margin (margin >= 0)."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return bool(sym_eigs(S).eigenvalues[-1] <= -margin)
