"""Value-at-risk margins for scalar mixtures and the worst case over an MW2 ball.

The worst-case margin maximises the component-wise quantile surrogate
``Σ_k π̂_k (m̂_k + σ̂_k Z)`` over mixtures within transport budget ``γ`` of
the reference. The problem is bilinear in (coupling, parameters); it is
solved by alternating exact ascent on each block.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .ambiguity import AmbiguitySet, Coupling
from .gmm import SIGMA_FLOOR, Gmm, cdf


# Acklam's rational approximation of the standard normal quantile.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _acklam(p: np.ndarray) -> np.ndarray:
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1 - _P_LOW
    mid = ~(lo | hi)
    q = p[mid] - 0.5
    r = q * q
    x[mid] = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
              / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1))
    for mask, sign, pp in ((lo, 1.0, p[lo]), (hi, -1.0, 1 - p[hi])):
        q = np.sqrt(-2 * np.log(pp))
        x[mask] = sign * ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                          / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    return x


def normal_quantile(p):
    """Inverse standard normal CDF; rational start plus one Halley step.

    The upper half is computed as ``-q(1 - p)``: ``1 - p`` is exact there and
    the lower tail of ``ndtr`` keeps full relative accuracy.
    """
    arr = np.asarray(p, dtype=float)
    if np.any((arr <= 0) | (arr >= 1)):
        raise ValueError("p must lie in (0, 1)")
    flat = arr.ravel()
    upper = flat > 0.5
    q = np.where(upper, 1.0 - flat, flat)
    x = _acklam(q)
    e = ndtr(x) - q
    u = e * math.sqrt(2 * math.pi) * np.exp(0.5 * x * x)
    x = x - u / (1 + 0.5 * x * u)
    x = np.where(upper, -x, x).reshape(arr.shape)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class VarSpec:
    alpha: float
    z: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        object.__setattr__(self, "z", normal_quantile(1.0 - self.alpha))

    @property
    def confidence(self) -> float:
        return 1.0 - self.alpha


def exact_icdf(g: Gmm, p: float, tol: float = 1e-12, max_iter: int = 400) -> float:
    """Mixture quantile by bisection on the CDF."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    lo = float(np.min(g.means - 40 * g.stds))
    hi = float(np.max(g.means + 40 * g.stds))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        err = float(cdf(g, mid)) - p
        if abs(err) < tol or mid in (lo, hi):
            return mid
        if err < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def approx_icdf(g: Gmm, p: float) -> float:
    """Weighted sum of per-component quantiles ``Σ π_k (m_k + σ_k Z_p)``."""
    z = normal_quantile(p)
    return float(g.weights @ (g.means + g.stds * z))


def closed_form_margin(reference: Gmm, radius: float, z: float) -> float:
    """Upper bound ``approx_icdf + sqrt(γ (1 + Z²))`` on the worst-case surrogate.

    It follows from Cauchy-Schwarz on the transport cost and is attained by
    shifting every component by ``(1, Z) sqrt(γ / (1 + Z²))``.
    """
    return float(reference.weights @ (reference.means + reference.stds * z)
                 + math.sqrt(radius * (1.0 + z * z)))


@dataclass
class WorstCaseResult:
    zeta: float
    worst: Gmm
    coupling: Coupling
    objective_trace: list
    active_distance: float
    start: int = 0
    stalled: bool = False

    def to_dict(self) -> dict:
        return {"zeta": self.zeta, "worst": self.worst.to_dict(),
                "coupling": self.coupling.to_dict(), "objective_trace": list(self.objective_trace),
                "active_distance": self.active_distance, "start": self.start,
                "stalled": self.stalled}


def _pair_costs(ref: Gmm, m_hat, s_hat) -> np.ndarray:
    return (ref.means[None, :] - m_hat[:, None]) ** 2 + (ref.stds[None, :] - s_hat[:, None]) ** 2


def _step_params(ref: Gmm, w, radius, z, m_prev, s_prev):
    """Best component parameters for a fixed coupling (Lagrangian closed form)."""
    rows = w.sum(axis=1)
    m_hat = m_prev.copy()
    s_hat = s_prev.copy()
    live = rows > 0
    m_bar = (w[live] @ ref.means) / rows[live]
    s_bar = (w[live] @ ref.stds) / rows[live]
    # rows fed by a single component take its parameters exactly
    single = np.count_nonzero(w[live], axis=1) == 1
    src = np.argmax(w[live] > 0, axis=1)
    m_bar[single] = ref.means[src[single]]
    s_bar[single] = ref.stds[src[single]]
    spread = float(np.sum(w[live] * ((ref.means[None, :] - m_bar[:, None]) ** 2
                                     + (ref.stds[None, :] - s_bar[:, None]) ** 2)))
    scale = float(ref.weights @ (ref.means ** 2 + ref.stds ** 2))
    if spread > radius + 1e-14 * scale:
        return None
    shift = math.sqrt(max(radius - spread, 0.0) / (1.0 + z * z))
    m_hat[live] = m_bar + shift
    s_hat[live] = np.maximum(s_bar + z * shift, SIGMA_FLOOR)
    return m_hat, s_hat


def _step_coupling(ref: Gmm, values, costs, radius):
    """Maximise ``Σ w_kl values_k`` over column-feasible couplings within the budget.

    Solved through the piecewise-linear dual ``min_ν νγ + Σ_l π_l max_k (v_k − ν d_kl)``.
    """
    K, L = costs.shape
    pi = ref.weights

    def dual(nu):
        return nu * radius + float(pi @ np.max(values[:, None] - nu * costs, axis=0))

    nus = [0.0]
    for l in range(L):
        for k1, k2 in itertools.combinations(range(K), 2):
            dd = costs[k1, l] - costs[k2, l]
            if dd != 0:
                nu = (values[k1] - values[k2]) / dd
                if nu > 0:
                    nus.append(nu)
    nu = min(nus, key=lambda v: (dual(v), v))
    scores = values[:, None] - nu * costs
    best = scores.max(axis=0)
    scale = max(1.0, float(np.abs(values).max()), float(nu * np.abs(costs).max()))
    w = np.zeros((K, L))
    lo_rows, hi_rows = [], []
    for l in range(L):
        tied = np.flatnonzero(scores[:, l] >= best[l] - 1e-12 * scale)
        lo_rows.append(tied[np.argmin(costs[tied, l])])
        hi_rows.append(tied[np.argmax(costs[tied, l])])
    for l in range(L):
        w[lo_rows[l], l] = pi[l]
    used = float(np.sum(w * costs))
    if nu > 0:
        for l in range(L):
            gap = costs[hi_rows[l], l] - costs[lo_rows[l], l]
            room = radius - used
            if gap <= 0 or room <= 0:
                continue
            t = min(pi[l], room / gap)
            w[lo_rows[l], l] -= t
            w[hi_rows[l], l] += t
            used += t * gap
    return w


def _initial_couplings(ref: Gmm, K: int):
    """Starts: reference component l sent wholly to slot ``perm[l % K]``."""
    L = ref.K
    if K <= 4:
        perms = list(itertools.permutations(range(K)))
    else:
        perms = [tuple(int(i) for i in (np.arange(K) + s) % K) for s in range(K)]
        perms.append(tuple(range(K))[::-1])
    for perm in perms:
        w = np.zeros((K, L))
        m0 = ref.means[np.arange(K) % L].copy()
        s0 = ref.stds[np.arange(K) % L].copy()
        for l in reversed(range(L)):
            k = perm[l % K]
            w[k, l] = ref.weights[l]
            m0[k], s0[k] = ref.means[l], ref.stds[l]
        yield w, m0, s0


def _objective(w, m_hat, s_hat, z):
    return float(w.sum(axis=1) @ (m_hat + z * s_hat))


def worst_case_margin(aset: AmbiguitySet, var: VarSpec, rtol: float = 1e-10,
                      max_iter: int = 200) -> WorstCaseResult:
    """Worst-case VaR surrogate over the ambiguity set by alternating ascent.

    Each start fixes a coupling of reference components to candidate slots,
    then alternates (A) the closed-form parameter update for that coupling
    and (B) the exact coupling LP for those parameters. The best start wins
    (objective, then lower transport cost, then lower start index).
    """
    if aset.radius < 0:
        raise ValueError("radius must be >= 0")
    ref = aset.reference.drop_empty()
    K = aset.K_budget
    z = var.z
    gamma = float(aset.radius)
    bound = closed_form_margin(ref, gamma, z)
    bound_tol = 1e-12 * max(1.0, abs(bound))
    best = None
    for start, (w, m_hat, s_hat) in enumerate(_initial_couplings(ref, K)):
        upd = _step_params(ref, w, gamma, z, m_hat, s_hat)
        if upd is None:
            continue
        m_hat, s_hat = upd
        trace = [_objective(w, m_hat, s_hat, z)]
        for _ in range(max_iter):
            w_new = _step_coupling(ref, m_hat + z * s_hat, _pair_costs(ref, m_hat, s_hat), gamma)
            upd = _step_params(ref, w_new, gamma, z, m_hat, s_hat)
            if upd is None:
                break
            obj = _objective(w_new, *upd, z)
            if obj < trace[-1]:
                break
            w, (m_hat, s_hat) = w_new, upd
            trace.append(obj)
            if abs(trace[-1] - trace[-2]) <= rtol * max(abs(trace[-2]), 1e-300):
                break
        cost = float(np.sum(w * _pair_costs(ref, m_hat, s_hat)))
        key = (trace[-1], -cost, -start)
        if best is None or key > best[0]:
            best = (key, w, m_hat, s_hat, trace, cost, start)
        if trace[-1] >= bound - bound_tol:
            break
    if best is None:
        raise ValueError(f"no {K}-component mixture lies within radius {gamma} of the reference")
    _, w, m_hat, s_hat, trace, cost, start = best
    rows = w.sum(axis=1)
    keep = rows > 0
    worst = Gmm(rows[keep] / rows[keep].sum(), m_hat[keep], s_hat[keep])
    base = float(ref.weights @ (ref.means + z * ref.stds))
    stalled = gamma > 0 and z > 0 and not trace[-1] > base
    return WorstCaseResult(
        zeta=float(worst.weights @ (worst.means + z * worst.stds)),
        worst=worst,
        coupling=Coupling(w[keep], rows[keep], ref.weights),
        objective_trace=trace,
        active_distance=cost,
        start=start,
        stalled=stalled,
    )
