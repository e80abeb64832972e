"""Exact discrete optimal transport by the transportation (network) simplex.

Basis trees live on the bipartite graph rows ∪ columns. Entering and leaving
cells follow Bland's smallest-index rule, which rules out cycling on the
degenerate pivots that are common when supplies and demands coincide.
"""

from __future__ import annotations

from collections import deque

import numpy as np


class TransportError(RuntimeError):
    def __init__(self, message: str, residuals: dict | None = None):
        self.residuals = residuals or {}
        super().__init__(f"{message} {self.residuals}" if residuals else message)


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    K, L = len(a), len(b)
    a = a.copy()
    b = b.copy()
    flow = np.zeros((K, L))
    basis = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        flow[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == K - 1 and j == L - 1:
            break
        if i == K - 1:
            j += 1
        elif j == L - 1:
            i += 1
        elif a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(C: np.ndarray, basis):
    K, L = C.shape
    adj = {("r", i): [] for i in range(K)}
    adj.update({("c", j): [] for j in range(L)})
    for i, j in basis:
        adj[("r", i)].append(("c", j))
        adj[("c", j)].append(("r", i))
    u = np.full(K, np.nan)
    v = np.full(L, np.nan)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        kind, idx = queue.popleft()
        for nb in adj[(kind, idx)]:
            if kind == "r" and np.isnan(v[nb[1]]):
                v[nb[1]] = C[idx, nb[1]] - u[idx]
                queue.append(nb)
            elif kind == "c" and np.isnan(u[nb[1]]):
                u[nb[1]] = C[nb[1], idx] - v[idx]
                queue.append(nb)
    if np.isnan(u).any() or np.isnan(v).any():
        raise TransportError("basis is not a spanning tree")
    return u, v


def _tree_path(basis, start, goal):
    """Node path from ``start`` to ``goal`` in the basis tree."""
    adj = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj.get(node, []):
            if nb not in prev:
                prev[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return path[::-1]


def transport(a, b, C, tol: float | None = None, max_iter: int = 10_000):
    """Minimise ``Σ w_kl C_kl`` over couplings with row sums ``a`` and column sums ``b``.

    Returns ``(cost, w)``. Marginals must have equal totals.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    C = np.asarray(C, dtype=float)
    if C.shape != (len(a), len(b)):
        raise ValueError("cost matrix shape does not match marginals")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be non-negative")
    if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, a.sum()):
        raise ValueError("marginals must have equal totals")
    b = b * (a.sum() / b.sum())
    K, L = C.shape
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.abs(C).max(initial=0.0)))
    flow, basis = _northwest_corner(a, b)
    for _ in range(max_iter):
        u, v = _potentials(C, basis)
        reduced = C - u[:, None] - v[None, :]
        in_basis = np.zeros((K, L), dtype=bool)
        for cell in basis:
            in_basis[cell] = True
        candidates = np.argwhere((reduced < -tol) & ~in_basis)
        if len(candidates) == 0:
            break
        ei, ej = map(int, candidates[0])  # Bland: smallest row-major index
        # cycle: entering cell, then the tree path from column ej back to row ei
        path = _tree_path(basis, ("c", ej), ("r", ei))
        cells = [(ei, ej)]
        for p, q in zip(path[:-1], path[1:]):
            cells.append((q[1], p[1]) if p[0] == "c" else (p[1], q[1]))
        minus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] <= theta)
        for k, c in enumerate(cells):
            flow[c] += theta if k % 2 == 0 else -theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
    else:
        raise TransportError("transportation simplex did not converge",
                             {"row": float(np.abs(flow.sum(1) - a).max()),
                              "col": float(np.abs(flow.sum(0) - b).max())})
    flow = np.maximum(flow, 0.0)
    resid = {"row": float(np.abs(flow.sum(1) - a).max()),
             "col": float(np.abs(flow.sum(0) - b).max())}
    if max(resid.values()) > 1e-9:
        raise TransportError("coupling marginals violated", resid)
    return float(np.sum(flow * C)), flow
