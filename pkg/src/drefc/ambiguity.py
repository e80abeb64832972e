"""Wasserstein-type geometry on scalar Gaussian mixtures.

The mixture distance restricts transport plans to couplings of mixture
components, with the closed-form Gaussian W2 as ground cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmm import Gmm
from .transport import transport

MEMBERSHIP_TOL = 1e-12


def w2_gaussian(m1, s1, m2, s2):
    """Squared 2-Wasserstein distance between N(m1, s1²) and N(m2, s2²)."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise ValueError("standard deviations must be positive")
    return (np.asarray(m1) - m2) ** 2 + (s1 - s2) ** 2


def ground_cost(a: Gmm, b: Gmm) -> np.ndarray:
    """Pairwise component costs, shape (a.K, b.K)."""
    return w2_gaussian(a.means[:, None], a.stds[:, None], b.means[None, :], b.stds[None, :])


@dataclass(frozen=True)
class Coupling:
    w: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray

    @classmethod
    def from_matrix(cls, w) -> "Coupling":
        w = np.asarray(w, dtype=float)
        return cls(w, w.sum(axis=1), w.sum(axis=0))

    def check(self, tol: float = 1e-10) -> bool:
        return bool(np.all(self.w >= -tol)
                    and np.allclose(self.w.sum(axis=1), self.row_marginals, atol=tol, rtol=0)
                    and np.allclose(self.w.sum(axis=0), self.col_marginals, atol=tol, rtol=0))

    def cost(self, C: np.ndarray) -> float:
        return float(np.sum(self.w * C))

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "row_marginals": self.row_marginals.tolist(),
                "col_marginals": self.col_marginals.tolist()}


@dataclass(frozen=True)
class AmbiguitySet:
    reference: Gmm
    radius: float
    K_budget: int | None = None

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.K_budget is None:
            object.__setattr__(self, "K_budget", self.reference.K)
        if self.K_budget < 1:
            raise ValueError("K_budget must be >= 1")

    def with_reference(self, reference: Gmm) -> "AmbiguitySet":
        return AmbiguitySet(reference, self.radius, reference.K)


def mw2(a: Gmm, b: Gmm):
    """Mixture Wasserstein distance (squared) and an optimal coupling of ``a`` to ``b``.

    Zero-weight components are dropped before solving; the returned coupling
    is expanded back to the full ``a.K × b.K`` shape.
    """
    ka = a.weights > 0
    kb = b.weights > 0
    ar, br = a.drop_empty(), b.drop_empty()
    cost, w_r = transport(ar.weights, br.weights, ground_cost(ar, br))
    w = np.zeros((a.K, b.K))
    w[np.ix_(ka, kb)] = w_r
    return max(cost, 0.0), Coupling(w, a.weights, b.weights)


def membership(aset: AmbiguitySet, candidate: Gmm):
    """``(inside, distance)`` for the ball ``mw2(reference, ·) <= radius``."""
    d, _ = mw2(aset.reference, candidate)
    return d <= aset.radius + MEMBERSHIP_TOL, d
