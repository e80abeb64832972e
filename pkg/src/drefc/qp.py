"""Strictly convex QP ``min ½ xᵀHx + cᵀx  s.t.  G x >= h`` by the Goldfarb-Idnani method.

The dual active-set iteration starts at the unconstrained minimiser and adds
the most violated constraint each major step, so no feasible starting point
is needed and an empty step set certifies infeasibility. The Cholesky factor
of ``H`` is computed once; the QR factors of the active normals are rebuilt
from it each step (problems here are small).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class InfeasibleError(RuntimeError):
    def __init__(self, message: str, max_margin: float | None = None, constraint: int | None = None):
        self.max_margin = max_margin
        self.constraint = constraint
        super().__init__(message)


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray
    active: list
    iterations: int
    objective: float


def _factor_active(Linv: np.ndarray, N: np.ndarray):
    if N.shape[1] == 0:
        return Linv.T, np.zeros((0, 0))
    Q, R = np.linalg.qr(Linv @ N, mode="complete")
    return Linv.T @ Q, R[: N.shape[1]]


def solve_qp(H, c, G, h, tol: float = 1e-12, max_iter: int | None = None) -> QpResult:
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, n)
    h = np.asarray(h, dtype=float).ravel()
    m = G.shape[0]
    L = np.linalg.cholesky(H)
    Linv = scipy.linalg.solve_triangular(L, np.eye(n), lower=True)
    x = -Linv.T @ (Linv @ c)
    active: list[int] = []
    u = np.zeros(0)
    row_norm = np.maximum(np.linalg.norm(G, axis=1), 1e-300)
    max_iter = max_iter or 50 * (n + m) + 100
    it = 0
    while True:
        slack = (G @ x - h) / row_norm
        slack[active] = np.inf
        p = int(np.argmin(slack)) if m else 0
        if m == 0 or slack[p] >= -tol:
            break
        u_plus = np.append(u, 0.0)
        npl = G[p]
        while True:
            it += 1
            if it > max_iter:
                raise RuntimeError("QP active-set iteration limit reached")
            J, R = _factor_active(Linv, G[active].T)
            q = len(active)
            d = J.T @ npl
            z = J[:, q:] @ d[q:]
            r = scipy.linalg.solve_triangular(R, d[:q]) if q else np.zeros(0)
            # dual (partial) step bound
            t1, drop = np.inf, -1
            for j in range(q):
                if r[j] > 0:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, drop = ratio, j
            # primal (full) step
            zn = float(z @ npl)
            if zn <= 1e-13 * float(d @ d):
                t2 = np.inf
            else:
                t2 = (h[p] - float(npl @ x)) / zn
            t = min(t1, t2)
            if not np.isfinite(t):
                raise InfeasibleError("constraints are infeasible", constraint=p)
            if np.isfinite(t2):
                x = x + t * z
            u_plus = u_plus + t * np.append(-r, 1.0)
            if t == t2:
                u = u_plus
                active.append(p)
                break
            # partial step: drop the blocking constraint and retry p
            u_plus = np.delete(u_plus, drop)
            active.pop(drop)
    lam = np.zeros(m)
    lam[active] = u
    obj = float(0.5 * x @ H @ x + c @ x)
    return QpResult(x, lam, sorted(active), it, obj)


def kkt_residual(H, c, G, h, x, lam) -> float:
    """Max of stationarity, primal/dual infeasibility and complementarity violations."""
    H = np.asarray(H, dtype=float)
    c = np.zeros(len(x)) if c is None else c
    G = np.asarray(G, dtype=float).reshape(-1, len(x))
    s = G @ x - h
    parts = [np.abs(H @ x + c - G.T @ lam).max(initial=0.0),
             np.maximum(-s, 0).max(initial=0.0),
             np.maximum(-lam, 0).max(initial=0.0),
             np.abs(lam * s).max(initial=0.0)]
    return float(max(parts))
