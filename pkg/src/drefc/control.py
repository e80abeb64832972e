"""Margin-constrained quadratic control on the Koopman predictor.

Error convention for margins: the *shortfall* ``ξ = f̄ − f_real`` (positive
when the plant ends up below the prediction). A margin ``ζ`` covering the
(1−α) quantile of ξ keeps ``f_real >= f_min`` with probability 1−α whenever
``f̄ − f_min >= ζ``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import sfr
from .ambiguity import AmbiguitySet
from .dro import VarSpec, WorstCaseResult, worst_case_margin
from .gmm import Gmm, JointGmm, condition
from .koopman import KoopmanModel, lift, prediction_operators
from .qp import InfeasibleError, kkt_residual, solve_qp

ACTIVE_TOL = 1e-8


@dataclass
class ControlProblem:
    """``min vᵀRv`` s.t. ``f̄_t − f_min >= ζ_t`` (t = 1..T) and ``lb <= v <= ub``.

    The stacked input sequence is ``u = input_map @ v`` (identity by default),
    so ``R`` and the bounds act on the decision vector ``v``.
    """

    model: KoopmanModel
    g0: np.ndarray
    R: np.ndarray
    f_min: float
    zeta: float | np.ndarray
    horizon: int
    u_bounds: tuple = (0.0, np.inf)
    input_map: np.ndarray | None = None
    operators: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        nv = self.n_decision
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape == (1, 1) and nv > 1:
            R = R[0, 0] * np.eye(nv)
        if R.shape != (nv, nv):
            raise ValueError(f"R must be {nv}x{nv}")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc
        self.R = R
        lb, ub = (np.broadcast_to(np.asarray(b, dtype=float), (nv,)).copy() for b in self.u_bounds)
        if np.any(lb > ub):
            raise ValueError("empty control bounds")
        self.u_bounds = (lb, ub)
        z = np.broadcast_to(np.asarray(self.zeta, dtype=float), (self.horizon,))
        if not np.all(np.isfinite(z)):
            raise ValueError("margin must be finite")

    @property
    def n_decision(self) -> int:
        if self.input_map is None:
            return self.horizon * self.model.input_dim
        return np.asarray(self.input_map).shape[1]

    def linear_map(self):
        """``(f_free, S)`` with predicted frequencies ``f̄ = f_free + S v``."""
        if self.operators is None:
            self.operators = prediction_operators(self.model, self.horizon)
        Phi, Gamma = self.operators
        S = Gamma if self.input_map is None else Gamma @ np.asarray(self.input_map, dtype=float)
        return Phi @ np.asarray(self.g0, dtype=float), S

    def margins(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.zeta, dtype=float), (self.horizon,)).copy()


@dataclass
class ControlSolution:
    u: np.ndarray
    cost: float
    active_steps: list
    kkt_residual: float
    multipliers: np.ndarray = field(repr=False, default=None)
    predicted: np.ndarray = field(repr=False, default=None)


def _constraint_rows(problem: ControlProblem):
    f_free, S = problem.linear_map()
    lb, ub = problem.u_bounds
    nv = problem.n_decision
    G = [S]
    h = [problem.f_min + problem.margins() - f_free]
    fin_lb = np.isfinite(lb)
    fin_ub = np.isfinite(ub)
    eye = np.eye(nv)
    G += [eye[fin_lb], -eye[fin_ub]]
    h += [lb[fin_lb], -ub[fin_ub]]
    return np.vstack(G), np.concatenate(h), f_free, S


def max_margin(f_free, S, f_min, lb, ub) -> float:
    """Largest uniform margin ``min_t (f̄_t − f_min)`` reachable within the bounds (LP)."""
    T, nv = S.shape
    c = np.zeros(nv + 1)
    c[-1] = -1.0
    A = np.hstack([-S, np.ones((T, 1))])
    b = f_free - f_min
    bounds = [(None if not np.isfinite(l) else l, None if not np.isfinite(u) else u)
              for l, u in zip(lb, ub)] + [(None, None)]
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status == 3:
        return np.inf
    return float(-res.fun)


def solve_drefc_u(problem: ControlProblem) -> ControlSolution:
    """Solve the margin-constrained QP; raises :class:`InfeasibleError` with the best margin."""
    G, h, f_free, S = _constraint_rows(problem)
    H = 2.0 * problem.R
    try:
        res = solve_qp(H, None, G, h)
    except InfeasibleError as exc:
        lb, ub = problem.u_bounds
        best = max_margin(f_free, S, problem.f_min, lb, ub)
        raise InfeasibleError(
            f"margin {float(np.max(problem.margins())):.6g} not reachable; best uniform margin "
            f"{best:.6g}", max_margin=best, constraint=exc.constraint) from None
    v = res.x
    T = problem.horizon
    lam = res.multipliers
    return ControlSolution(
        u=v,
        cost=float(v @ problem.R @ v),
        active_steps=[int(t) for t in np.flatnonzero(lam[:T] > ACTIVE_TOL)],
        kkt_residual=kkt_residual(H, None, G, h, v, lam),
        multipliers=lam,
        predicted=f_free + S @ v,
    )


def one_shot_problem(model, g0, zeta, f_min, R=1.0, horizon=150, u_max=np.inf):
    """Single shedding amount ``s`` held over the horizon: ``u_k = s`` for all k."""
    hold = np.ones((horizon * model.input_dim, 1))
    return ControlProblem(model, g0, np.atleast_2d(R), f_min, zeta, horizon,
                          (0.0, u_max), input_map=hold)


def one_shot_load_shed(model: KoopmanModel, g0, aset: AmbiguitySet, var: VarSpec, f_min: float,
                       R=1.0, horizon: int = 150, u_max: float = np.inf,
                       worst: WorstCaseResult | None = None) -> ControlSolution:
    """Worst-case margin (reusable offline via ``worst``) followed by the one-variable QP."""
    if worst is None:
        worst = worst_case_margin(aset, var)
    return solve_drefc_u(one_shot_problem(model, g0, worst.zeta, f_min, R, horizon, u_max))


# ----------------------------------------------------------------------------
# moving-horizon DC power regulation

@dataclass
class LoopState:
    window: int
    past_errors: np.ndarray
    reference: Gmm
    zeta: float
    applied: np.ndarray
    feasible: bool = True
    note: str = ""


@dataclass
class DcConfig:
    f_min: float = -0.015
    R_weight: float | None = None
    control_horizon: int = 100
    block: int = 5
    n_windows: int = 30
    anchor_time: float = 2.0
    run_time: float = 20.0
    u_max: float = 0.1


@dataclass
class DcRun:
    states: list
    times: np.ndarray
    freq_dev: np.ndarray
    clean_freq_dev: np.ndarray
    controls: np.ndarray
    nadir: float
    cost: float
    infeasible_windows: int


def _blocked_map(horizon: int, block: int) -> np.ndarray:
    nb = -(-horizon // block)
    E = np.zeros((horizon, nb))
    for k in range(horizon):
        E[k, k // block] = 1.0
    return E


def closed_loop_dc(params: sfr.SfrParams, dist: sfr.Disturbance, model: KoopmanModel,
                   joint: JointGmm | None, radius: float, var: VarSpec, cfg: DcConfig,
                   seed: int = 0, static_reference: Gmm | None = None,
                   operators: tuple | None = None) -> DcRun:
    """Moving-horizon DC regulation on the SFR plant.

    Each window: shortfalls of the anchored prediction over the last ``M``
    model steps → conditional error mixture (or ``static_reference`` when
    given) → worst-case margin → blocked QP over ``control_horizon`` steps →
    first block applied. The shortfall at the anchor itself is zero because
    the lift carries the measured frequency, so the first window conditions
    on zeros. QP failures hold the previous control and are flagged.
    """
    if joint is None and static_reference is None:
        raise ValueError("need a joint mixture or a static reference")
    if joint is not None and joint.N != 1:
        raise ValueError("closed loop expects a scalar future block (N = 1)")
    M = joint.n_past if joint is not None else 0
    stride = model.stride
    dt = params.step_dt
    n_total = sfr.n_steps(cfg.run_time, dt)
    ja = int(round(cfg.anchor_time / model.dt))
    k_anchor = ja * stride
    k_end = k_anchor + cfg.n_windows * cfg.block * stride
    if k_end > n_total:
        raise ValueError("run_time too short for the requested windows")
    deficits = sfr.deficit_profile(dist, n_total, dt)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, params.noise_std, n_total + 1) if params.noise_std > 0 else np.zeros(n_total + 1)
    clean = np.zeros(n_total + 1)
    u_plant = np.zeros(n_total + 1)
    state = [0.0, 0.0]

    def advance(k0, k1, u):
        w, p = state
        for k in range(k0, k1):
            u_plant[k] = u
            w, p = sfr.rk4_step(w, p, u - deficits[k], params)
            if not np.isfinite(w):
                raise sfr.IntegrationError(k + 1)
            clean[k + 1] = w
        state[:] = [w, p]

    advance(0, k_anchor, 0.0)
    g = lift(model.dictionary, (clean + noise)[: k_anchor + 1: stride], np.zeros(ja))
    R_weight = model.dt if cfg.R_weight is None else cfg.R_weight
    E = _blocked_map(cfg.control_horizon, cfg.block)
    R = R_weight * cfg.block * np.eye(E.shape[1])
    if operators is None:
        operators = prediction_operators(model, cfg.control_horizon)

    static_zeta = None
    if static_reference is not None:
        static_zeta = worst_case_margin(AmbiguitySet(static_reference, radius), var).zeta

    applied: list[float] = []
    shortfall = [0.0]
    states = []
    u_prev = 0.0
    infeasible = 0
    for wi in range(cfg.n_windows):
        past = np.array(shortfall[-M:]) if M else np.zeros(0)
        if len(past) < M:
            past = np.concatenate([np.zeros(M - len(past)), past])
        if static_zeta is not None:
            ref, zeta = static_reference, static_zeta
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ref = condition(joint, past)
            zeta = worst_case_margin(AmbiguitySet(ref, radius), var).zeta
        prob = ControlProblem(model, g, R, cfg.f_min, zeta, cfg.control_horizon,
                              (0.0, cfg.u_max), E, operators)
        feasible = True
        try:
            u_now = float(solve_drefc_u(prob).u[0])
        except InfeasibleError:
            # an emergency controller must not stall: keep the last action
            u_now, feasible = u_prev, False
            infeasible += 1
        k0 = k_anchor + wi * cfg.block * stride
        for j in range(cfg.block):
            g = model.A @ g + model.B[:, 0] * u_now
            advance(k0 + j * stride, k0 + (j + 1) * stride, u_now)
            shortfall.append(float(g[0]) - (clean[k0 + (j + 1) * stride] + noise[k0 + (j + 1) * stride]))
            applied.append(u_now)
        states.append(LoopState(wi, past, ref, float(zeta), np.array(applied), feasible,
                                "" if feasible else "infeasible: held previous control"))
        u_prev = u_now
    advance(k_end, n_total, u_prev)
    u_arr = np.array(applied)
    return DcRun(
        states=states,
        times=dt * np.arange(n_total + 1),
        freq_dev=clean + noise,
        clean_freq_dev=clean,
        controls=u_plant,
        nadir=float(clean.min()),
        cost=float(R_weight * u_arr @ u_arr),
        infeasible_windows=infeasible,
    )
