"""Gaussian mixtures: densities, EM fitting, sampling, marginals, conditioning."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

SIGMA_FLOOR = 1e-6
EIG_FLOOR = 1e-10
LOG_2PI = np.log(2.0 * np.pi)


class DegenerateDataWarning(UserWarning):
    pass


class ConditioningWarning(UserWarning):
    pass


def _normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("mixture weights must be finite and non-negative")
    s = w.sum()
    if abs(s - 1.0) > 1e-6:
        raise ValueError(f"mixture weights sum to {s}, expected 1")
    return w / s


@dataclass(frozen=True)
class Gmm:
    """Scalar mixture ``Σ_k π_k N(m_k, σ_k²)``; stddevs below the floor are raised to it."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = _normalize_weights(self.weights)
        m = np.asarray(self.means, dtype=float).ravel()
        s = np.asarray(self.stds, dtype=float).ravel()
        if not (len(w) == len(m) == len(s)) or len(w) == 0:
            raise ValueError("weights, means and stds must have equal non-zero length")
        if np.any(s < 0) or not np.all(np.isfinite(m)) or not np.all(np.isfinite(s)):
            raise ValueError("stds must be finite and non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", np.maximum(s, SIGMA_FLOOR))

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    @property
    def variance(self) -> float:
        return float(self.weights @ (self.stds ** 2 + self.means ** 2) - self.mean ** 2)

    def drop_empty(self, tol: float = 0.0) -> "Gmm":
        """Remove components with weight <= tol and renormalize."""
        keep = self.weights > tol
        w = self.weights[keep]
        return Gmm(w / w.sum(), self.means[keep], self.stds[keep])

    def to_dict(self) -> dict:
        return {"kind": "gmm", "weights": self.weights.tolist(), "means": self.means.tolist(),
                "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Gmm":
        return cls(d["weights"], d["means"], d["stds"])


@dataclass(frozen=True)
class JointGmm:
    """Vector mixture over ``[X_p; X_f]``; the first ``n_past`` coordinates are the past block."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    n_past: int = 0

    def __post_init__(self):
        w = _normalize_weights(self.weights)
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        c = np.asarray(self.covs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        G, D = m.shape
        if len(w) != G or c.shape != (G, D, D):
            raise ValueError("inconsistent joint mixture shapes")
        if not 0 <= self.n_past <= D:
            raise ValueError("n_past out of range")
        if not np.allclose(c, np.swapaxes(c, 1, 2), rtol=1e-8, atol=1e-300):
            raise ValueError("covariances must be symmetric")
        c = np.stack([floor_eigenvalues(ci, EIG_FLOOR) for ci in c])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @property
    def G(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def M(self) -> int:
        return self.n_past

    @property
    def N(self) -> int:
        return self.dim - self.n_past

    def to_dict(self) -> dict:
        return {"kind": "joint", "weights": self.weights.tolist(), "means": self.means.tolist(),
                "covs": self.covs.tolist(), "n_past": self.n_past}

    @classmethod
    def from_dict(cls, d: dict) -> "JointGmm":
        return cls(d["weights"], d["means"], d["covs"], int(d.get("n_past", 0)))


def mixture_from_dict(d: dict):
    return JointGmm.from_dict(d) if d.get("kind") == "joint" else Gmm.from_dict(d)


def floor_eigenvalues(cov: np.ndarray, floor: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() >= floor:
        return cov
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


# ----------------------------------------------------------------------------
# densities

def _component_logpdf_scalar(g: Gmm, x: np.ndarray) -> np.ndarray:
    z = (x[..., None] - g.means) / g.stds
    return -0.5 * z * z - np.log(g.stds) - 0.5 * LOG_2PI


def _component_logpdf_joint(means, covs, X: np.ndarray) -> np.ndarray:
    """log N(x; μ_g, Σ_g) for X of shape (n, D); returns (n, G)."""
    G, D = means.shape
    out = np.empty((X.shape[0], G))
    for g in range(G):
        L = np.linalg.cholesky(covs[g])
        diff = np.linalg.solve(L, (X - means[g]).T)
        out[:, g] = (-0.5 * np.sum(diff * diff, axis=0) - np.log(np.diag(L)).sum()
                     - 0.5 * D * LOG_2PI)
    return out


def logpdf(g, x):
    """Log density. Scalar mixtures broadcast over ``x``; joint mixtures take rows of ``x``."""
    if isinstance(g, Gmm):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return logsumexp(_component_logpdf_scalar(g, x) + np.log(g.weights), axis=-1)
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != g.dim:
        raise ValueError(f"point dimension {X.shape[1]} does not match mixture dimension {g.dim}")
    with np.errstate(divide="ignore"):
        out = logsumexp(_component_logpdf_joint(g.means, g.covs, X) + np.log(g.weights), axis=1)
    return out[0] if single else out


def pdf(g, x):
    return np.exp(logpdf(g, x))


def cdf(g: Gmm, x):
    """Mixture CDF; each component saturates to exactly 0/1 beyond ±40σ."""
    if not isinstance(g, Gmm):
        raise TypeError("cdf is defined for scalar mixtures")
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - g.means) / g.stds
    phi = np.where(z <= -40.0, 0.0, np.where(z >= 40.0, 1.0, ndtr(np.clip(z, -40.0, 40.0))))
    return np.clip(phi @ g.weights, 0.0, 1.0)


# ----------------------------------------------------------------------------
# EM

@dataclass
class FitReport:
    log_likelihood: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    degenerate: bool = False
    restart: int = 0
    restart_histories: list = field(default_factory=list, repr=False)

    @property
    def monotone(self) -> bool:
        """Log-likelihood never drops (1e-9 relative slack) in any restart."""
        runs = self.restart_histories or [self.history]
        for h in map(np.asarray, runs):
            if np.any(np.diff(h) < -1e-9 * np.maximum(1.0, np.abs(h[:-1]))):
                return False
        return True


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _em_run(X, K, floor, tol, max_iter, rng):
    n, D = X.shape
    means = _kmeanspp(X, K, rng)
    base = floor_eigenvalues(np.atleast_2d(np.cov(X.T, bias=True)), floor)
    covs = np.repeat(base[None], K, axis=0)
    weights = np.full(K, 1.0 / K)
    history = []
    converged = False
    for it in range(max_iter + 1):
        with np.errstate(divide="ignore"):
            logp = _component_logpdf_joint(means, covs, X) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        history.append(ll)
        if it > 0 and abs(ll - history[-2]) <= tol * max(abs(history[-2]), 1e-300):
            converged = True
            break
        if it == max_iter:
            break
        resp = np.exp(logp - norm[:, None])
        Nk = resp.sum(axis=0)
        weights = Nk / n
        for k in range(K):
            if Nk[k] <= 1e-300:
                continue
            mk = resp[:, k] @ X / Nk[k]
            diff = X - mk
            ck = (resp[:, k, None] * diff).T @ diff / Nk[k]
            means[k] = mk
            covs[k] = floor_eigenvalues(ck, floor)
    return weights, means, covs, FitReport(history[-1], len(history) - 1, converged, history)


def fit_em(samples, K: int = 3, tol: float = 1e-8, max_iter: int = 500, restarts: int = 5,
           seed: int = 0, n_past: int | None = None):
    """Maximum-likelihood mixture by EM with k-means++ seeding and restarts.

    1-D samples give a :class:`Gmm` (stddev floor ``SIGMA_FLOOR``); 2-D samples
    of shape (n, D) give a :class:`JointGmm` (eigenvalue floor ``EIG_FLOOR``).
    """
    X = np.asarray(samples, dtype=float)
    scalar = X.ndim == 1
    X = X[:, None] if scalar else X
    if X.ndim != 2:
        raise ValueError("samples must be 1-D or 2-D")
    n, D = X.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < 2 * K:
        raise ValueError(f"need at least {2 * K} samples for K={K}, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples must be finite")
    floor = SIGMA_FLOOR ** 2 if scalar else EIG_FLOOR

    if np.all(X == X[0]):
        warnings.warn("all samples identical; returning a single floored component",
                      DegenerateDataWarning, stacklevel=2)
        report = FitReport(float("nan"), 0, True, [], degenerate=True)
        if scalar:
            return Gmm([1.0], [X[0, 0]], [SIGMA_FLOOR]), report
        return JointGmm([1.0], X[:1], floor * np.eye(D)[None], n_past or 0), report

    best = None
    histories = []
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(max(1, restarts))):
        w, m, c, rep = _em_run(X, K, floor, tol, max_iter, np.random.default_rng(child))
        rep.restart = r
        histories.append(rep.history)
        if best is None or rep.log_likelihood > best[3].log_likelihood:
            best = (w, m, c, rep)
    w, m, c, rep = best
    rep.restart_histories = histories
    if scalar:
        return Gmm(w, m[:, 0], np.sqrt(c[:, 0, 0])), rep
    return JointGmm(w, m, c, n_past or 0), rep


def sample(g, n: int, seed=0) -> np.ndarray:
    """Draw ``n`` points: component by categorical draw, then a Gaussian draw."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comp = rng.choice(len(g.weights), size=n, p=g.weights)
    if isinstance(g, Gmm):
        return g.means[comp] + g.stds[comp] * rng.standard_normal(n)
    chol = np.linalg.cholesky(g.covs)
    z = rng.standard_normal((n, g.dim))
    return g.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


def _block_indices(j: JointGmm, block: str) -> np.ndarray:
    if block == "past":
        return np.arange(j.n_past)
    if block == "future":
        return np.arange(j.n_past, j.dim)
    raise ValueError("block must be 'past' or 'future'")


def _restrict(j: JointGmm, idx: np.ndarray, n_past: int = 0):
    if len(idx) == 0:
        raise ValueError("empty block")
    means = j.means[:, idx]
    covs = j.covs[:, idx][:, :, idx]
    if len(idx) == 1:
        return Gmm(j.weights, means[:, 0], np.sqrt(covs[:, 0, 0]))
    return JointGmm(j.weights, means, covs, n_past)


def marginal(j: JointGmm, block: str):
    """Same weights; means and covariances restricted to the block."""
    return _restrict(j, _block_indices(j, block))


def condition(j: JointGmm, x_p):
    """Mixture of ``X_f | X_p = x_p``.

    Weights are reweighted by each component's past-block likelihood, means
    shifted by the regression ``Σ_fp Σ_pp⁻¹ (x_p − μ_p)``, covariances are the
    Schur complements ``Σ_ff − Σ_fp Σ_pp⁻¹ Σ_pf``.
    """
    x_p = np.asarray(x_p, dtype=float).ravel()
    M = j.n_past
    if M == 0 or len(x_p) != M:
        raise ValueError(f"x_p must have length n_past={M}")
    if j.N == 0:
        raise ValueError("joint mixture has no future block")
    p = np.arange(M)
    f = np.arange(M, j.dim)
    G = j.G
    logw = np.empty(G)
    means = np.empty((G, len(f)))
    covs = np.empty((G, len(f), len(f)))
    regularized = False
    for g in range(G):
        S = j.covs[g]
        Spp = S[np.ix_(p, p)]
        Sfp = S[np.ix_(f, p)]
        Sff = S[np.ix_(f, f)]
        if np.linalg.eigvalsh(Spp).min() < EIG_FLOOR or np.linalg.cond(Spp) > 1e14:
            Spp = Spp + EIG_FLOOR * np.eye(M)
            regularized = True
        L = np.linalg.cholesky(Spp)
        diff = x_p - j.means[g, p]
        alpha = np.linalg.solve(L, diff)
        logw[g] = (np.log(j.weights[g]) if j.weights[g] > 0 else -np.inf) \
            - 0.5 * alpha @ alpha - np.log(np.diag(L)).sum() - 0.5 * M * LOG_2PI
        K = np.linalg.solve(L.T, np.linalg.solve(L, Sfp.T)).T   # Σ_fp Σ_pp⁻¹
        means[g] = j.means[g, f] + K @ diff
        schur = Sff - K @ Sfp.T
        covs[g] = 0.5 * (schur + schur.T)
    if regularized:
        warnings.warn("past-block covariance regularized", ConditioningWarning, stacklevel=2)
    if not np.isfinite(logw).any():
        raise ValueError("x_p has zero likelihood under every component")
    w = np.exp(logw - logsumexp(logw))
    w = w / w.sum()
    if len(f) == 1:
        var = np.maximum(covs[:, 0, 0], SIGMA_FLOOR ** 2)
        return Gmm(w, means[:, 0], np.sqrt(var))
    return JointGmm(w, means, covs, 0)


def histogram_rmse(g: Gmm, samples, bins: int = 30) -> float:
    """RMSE between the mixture density and a density-normalized histogram.

    Both are scaled by the histogram range so the figure is unit-free.
    """
    samples = np.asarray(samples, dtype=float)
    dens, edges = np.histogram(samples, bins=bins, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[-1] - edges[0]
    return float(np.sqrt(np.mean(((pdf(g, centers) - dens) * width) ** 2)))
