"""Experiment driver: data, models, scenario studies, baselines and reports.

Every study takes an :class:`ExperimentConfig` (JSON-serialisable) and is
deterministic in its seeds. Reports carry the per-scenario table so the
indicators can be recomputed from what is persisted.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import sfr
from .ambiguity import AmbiguitySet, mw2
from .control import (ControlProblem, ControlSolution, DcConfig, closed_loop_dc,
                      one_shot_problem, solve_drefc_u)
from .dro import VarSpec, WorstCaseResult, approx_icdf, exact_icdf, worst_case_margin
from .gmm import Gmm, JointGmm, condition, fit_em, histogram_rmse, logpdf, marginal, sample
from .koopman import (DictionarySpec, KoopmanModel, collect_errors, lift,
                      prediction_operators, train_edmd)
from .qp import InfeasibleError, kkt_residual, solve_qp

ECONOMY_THRESHOLD = -0.005


# ----------------------------------------------------------------------------
# configuration

@dataclass
class DataConfig:
    n_train: int = 300
    deficit_range: tuple = (0.04, 0.14)
    horizon: float = 60.0
    onset_time: float = 1.0
    anchor_time: float = 2.0
    control_amplitude: float = 0.05
    control_hold: float = 1.0
    seed: int = 1


@dataclass
class ModelConfig:
    delay_count: int = 10
    rbf_count: int = 10
    rbf_range: tuple = (-0.06, 0.0)
    input_delays: int = 10
    ridge: float = 1e-8
    stride: int = 10

    def dictionary(self) -> DictionarySpec:
        lo, hi = self.rbf_range
        return DictionarySpec.with_grid(self.delay_count, self.rbf_count, lo, hi,
                                        input_delays=self.input_delays)


@dataclass
class ErrorConfig:
    K: int = 3
    restarts: int = 5
    seed: int = 0
    nadir_horizon: int = 150
    joint_horizon: int = 100
    joint_K: int = 3
    n_past: int = 1


@dataclass
class DroConfig:
    alpha: float = 0.05
    alpha_guard: float = 0.0
    gamma: float | None = None
    gamma_quantile: float = 0.5
    n_bootstrap: int = 20
    seed: int = 0

    def var(self, alpha: float | None = None) -> VarSpec:
        """VaR level with the optional confidence inflation applied."""
        a = self.alpha if alpha is None else alpha
        return VarSpec(a - self.alpha_guard)


@dataclass
class ControlConfig:
    f_min: float = -0.015
    R_weight: float | None = None
    horizon: int = 150
    u_max: float = 0.2


@dataclass
class ScenarioConfig:
    n: int = 700
    seed: int = 11


@dataclass
class TimingConfig:
    counts: tuple = (100, 250, 500, 1000)
    repeats: int = 21
    seed: int = 5


@dataclass
class StudyConfig:
    confidences: tuple = (0.95, 0.96, 0.97, 0.98, 0.99, 0.995, 0.999)
    base_deficit: float = 0.07
    base_seed: int = 3
    icdf_n_gmms: int = 100
    icdf_Ks: tuple = (3, 4, 5)
    icdf_alphas: tuple = (0.01, 0.05, 0.1, 0.15, 0.2)
    icdf_seed: int = 0
    holdout_trajectories: int = 100
    holdout_seed: int = 2


_SECTIONS = {"plant": sfr.SfrParams, "data": DataConfig, "model": ModelConfig,
             "errors": ErrorConfig, "dro": DroConfig, "control": ControlConfig,
             "dc": DcConfig, "scenarios": ScenarioConfig, "timing": TimingConfig,
             "study": StudyConfig}


@dataclass
class ExperimentConfig:
    plant: sfr.SfrParams = field(default_factory=sfr.SfrParams)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    errors: ErrorConfig = field(default_factory=ErrorConfig)
    dro: DroConfig = field(default_factory=DroConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    dc: DcConfig = field(default_factory=DcConfig)
    scenarios: ScenarioConfig = field(default_factory=ScenarioConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, kind in _SECTIONS.items():
            sec = dict(d.get(name, {}))
            allowed = {f.name for f in fields(kind) if f.init}
            bad = set(sec) - allowed
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            for k, v in sec.items():
                if isinstance(v, list):
                    sec[k] = tuple(v)
            parts[name] = kind(**sec)
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# shared artefacts: model, error samples, mixtures, radius

@dataclass
class Artifacts:
    model: KoopmanModel
    train: list
    nadir_shortfall: np.ndarray
    step_shortfall: np.ndarray
    reference: Gmm
    radius: float
    radius_samples: np.ndarray
    joint: JointGmm | None = None
    timings: dict = field(default_factory=dict)
    fit_reports: list = field(default_factory=list, repr=False)


def shortfall_pairs(step_shortfall: np.ndarray, n_past: int = 1) -> np.ndarray:
    """Rows ``(x_{t-M+1..t}, x_{t+1})`` from per-trajectory shortfall series."""
    X = np.asarray(step_shortfall, dtype=float)
    T = X.shape[1]
    cols = [X[:, k: T - n_past + k] for k in range(n_past + 1)]
    return np.stack([c.ravel() for c in cols], axis=1)


def calibrate_radius(samples, reference: Gmm, K: int, n_boot: int = 20, quantile: float = 0.5,
                     seed: int = 0, restarts: int = 5, reports: list | None = None):
    """Radius from the spread of bootstrap refits: ``quantile`` of their mw2 to the reference.

    EM reports of the refits are appended to ``reports`` when given.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(samples, dtype=float)
    d = np.empty(n_boot)
    for b in range(n_boot):
        g, rep = fit_em(rng.choice(x, len(x)), K=K, seed=b, restarts=restarts)
        if reports is not None:
            reports.append(rep)
        d[b] = mw2(reference, g)[0]
    return float(np.quantile(d, quantile)), d


def build_artifacts(cfg: ExperimentConfig, with_joint: bool = False) -> Artifacts:
    """Training data → Koopman model → shortfall samples → reference mixture and radius."""
    dc, ec = cfg.data, cfg.errors
    tm = {}
    t0 = time.perf_counter()
    train = sfr.generate_dataset(cfg.plant, dc.n_train, dc.deficit_range, dc.horizon, dc.seed,
                                 dc.onset_time, dc.control_amplitude, dc.control_hold,
                                 dc.anchor_time)
    tm["simulate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    model = train_edmd(train, cfg.model.dictionary(), cfg.model.ridge, cfg.model.stride,
                       dc.anchor_time)
    tm["train"] = time.perf_counter() - t0
    horizon = max(ec.nadir_horizon, ec.joint_horizon)
    errs = collect_errors(model, train, "recorded", dc.anchor_time, horizon)
    # shortfall ξ = predicted − measured, the quantity a margin has to cover
    nadir = -np.array([e.nadir_error for e in errs])
    steps = -np.stack([e.errors for e in errs])
    t0 = time.perf_counter()
    ref, rep = fit_em(nadir, K=ec.K, restarts=ec.restarts, seed=ec.seed)
    reports = [rep]
    tm["fit_reference"] = time.perf_counter() - t0
    dro = cfg.dro
    if dro.gamma is None:
        t0 = time.perf_counter()
        radius, dist = calibrate_radius(nadir, ref, ec.K, dro.n_bootstrap, dro.gamma_quantile,
                                        dro.seed, ec.restarts, reports)
        tm["calibrate_radius"] = time.perf_counter() - t0
    else:
        radius, dist = float(dro.gamma), np.zeros(0)
    joint = None
    if with_joint:
        t0 = time.perf_counter()
        joint, rep = fit_em(shortfall_pairs(steps[:, : ec.joint_horizon], ec.n_past),
                            K=ec.joint_K, restarts=ec.restarts, seed=ec.seed, n_past=ec.n_past)
        reports.append(rep)
        tm["fit_joint"] = time.perf_counter() - t0
    return Artifacts(model, train, nadir, steps, ref, radius, dist, joint, tm, reports)


# ----------------------------------------------------------------------------
# scenarios and indicators

@dataclass
class ScenarioInput:
    scenario_id: int
    error: float
    g0: np.ndarray
    deficit: float = float("nan")


@dataclass
class ScenarioRun:
    scenario_id: int
    injected_error: float
    predicted_nadir: float
    realized_nadir: float
    safe: bool
    economic_flag: bool
    cost: float
    solve_time: float
    control: float = 0.0
    deficit: float = float("nan")
    feasible: bool = True


def event_lifts(cfg: ExperimentConfig, model: KoopmanModel, n: int, seed: int):
    """``n`` random events (uniform deficits, own noise) observed up to the anchor.

    Returns ``(deficits, g0s)`` with one lifted initial vector per event.
    """
    dc = cfg.data
    ds = sfr.generate_dataset(cfg.plant, n, dc.deficit_range, dc.anchor_time + model.dt, seed,
                              dc.onset_time)
    ja = int(round(dc.anchor_time / model.dt))
    g0s = np.stack([lift(model.dictionary, t.freq_dev[: ja * model.stride + 1: model.stride],
                         np.zeros(ja)) for t in ds])
    return np.array([t.disturbance.power_deficit for t in ds]), g0s


def generate_scenarios(error_gmm: Gmm, n: int, model: KoopmanModel, events, seed: int = 0,
                       deficits=None) -> list:
    """Pair ``n`` shortfall draws from ``error_gmm`` with events.

    ``events`` is either one lifted vector (a single base event for all
    scenarios) or an ``(n, lift_dim)`` array of per-scenario events.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ev = np.asarray(events, dtype=float)
    if ev.ndim == 1:
        ev = np.broadcast_to(ev, (n, model.lift_dim))
    if ev.shape != (n, model.lift_dim):
        raise ValueError(f"events must have shape ({n}, {model.lift_dim})")
    errors = sample(error_gmm, n, seed)
    d = np.full(n, np.nan) if deficits is None else np.asarray(deficits, dtype=float)
    return [ScenarioInput(i, float(errors[i]), ev[i].copy(), float(d[i])) for i in range(n)]


def run_load_shed(scenarios, model: KoopmanModel, zeta: float, f_min: float, R_weight=None,
                  horizon: int = 150, u_max: float = np.inf,
                  threshold: float = ECONOMY_THRESHOLD) -> list:
    """One-shot shedding per scenario; realized nadir = predicted nadir − shortfall.

    If the margin cannot be met the maximum shed is applied and the run is
    flagged infeasible.
    """
    R = model.dt if R_weight is None else R_weight
    ops = prediction_operators(model, horizon)
    runs = []
    for sc in scenarios:
        prob = one_shot_problem(model, sc.g0, zeta, f_min, R, horizon, u_max)
        prob.operators = ops
        t0 = time.perf_counter()
        feasible = True
        try:
            sol = solve_drefc_u(prob)
            s, pred = float(sol.u[0]), sol.predicted
        except InfeasibleError:
            feasible = False
            f_free, S = prob.linear_map()
            s = float(u_max)
            pred = f_free + S[:, 0] * s
        elapsed = time.perf_counter() - t0
        pn = float(pred.min())
        real = pn - sc.error
        runs.append(ScenarioRun(sc.scenario_id, sc.error, pn, real, real >= f_min, real > threshold,
                                float(R * s * s), elapsed, s, sc.deficit, feasible))
    return runs


def safety_indicator(runs) -> float:
    if not runs:
        raise ValueError("no runs")
    return float(np.mean([r.safe for r in runs]))


def economy_indicator(runs, threshold: float = ECONOMY_THRESHOLD) -> float:
    if not runs:
        raise ValueError("no runs")
    return float(np.mean([r.realized_nadir > threshold for r in runs]))


# ----------------------------------------------------------------------------
# reports

@dataclass
class ExperimentReport:
    name: str
    config_hash: str
    indicators: dict
    runs: list
    seeds: dict
    f_min: float = -0.015
    economy_threshold: float = ECONOMY_THRESHOLD
    extra: dict = field(default_factory=dict)

    def recompute(self) -> dict:
        """Indicators from the per-scenario table alone."""
        safe = [r.realized_nadir >= self.f_min for r in self.runs]
        econ = [r.realized_nadir > self.economy_threshold for r in self.runs]
        return {"safety": float(np.mean(safe)), "economy": float(np.mean(econ)),
                "mean_cost": float(np.mean([r.cost for r in self.runs]))}

    def to_dict(self) -> dict:
        return {"name": self.name, "config_hash": self.config_hash,
                "indicators": self.indicators, "seeds": self.seeds, "f_min": self.f_min,
                "economy_threshold": self.economy_threshold, "extra": _jsonable(self.extra),
                "runs": [asdict(r) for r in self.runs]}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        runs = [ScenarioRun(**r) for r in d["runs"]]
        return cls(d["name"], d["config_hash"], d["indicators"], runs, d["seeds"], d["f_min"],
                   d["economy_threshold"], d.get("extra", {}))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def make_report(name: str, cfg: ExperimentConfig, runs, seeds: dict, extra=None) -> ExperimentReport:
    rep = ExperimentReport(name, cfg.hash(), {}, list(runs), seeds, cfg.control.f_min,
                           ECONOMY_THRESHOLD, extra or {})
    rep.indicators = rep.recompute()
    return rep


def emit_report(report: ExperimentReport, out_dir) -> dict:
    """Write ``<name>.json`` (full report) and ``<name>.csv`` (per-scenario table)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / f"{report.name}.json"
    cpath = out / f"{report.name}.csv"
    jpath.write_text(json.dumps(report.to_dict(), indent=1, default=float))
    cols = [f.name for f in fields(ScenarioRun)]
    with cpath.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in report.runs:
            w.writerow([repr(v) if isinstance(v, float) else v
                        for v in (getattr(r, c) for c in cols)])
    return {"json": str(jpath), "csv": str(cpath)}


def load_report(path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text()))


def write_table(path, header, rows) -> str:
    """Plain CSV table (plot-ready data)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(p)


# ----------------------------------------------------------------------------
# load-shedding safety study

def load_shed_study(cfg: ExperimentConfig, art: Artifacts, distribution: str = "reference",
                    worst: WorstCaseResult | None = None, n: int | None = None,
                    seed: int | None = None) -> ExperimentReport:
    """Per-scenario random events with shortfalls drawn from the reference or worst mixture."""
    if distribution not in ("reference", "worst"):
        raise ValueError("distribution must be 'reference' or 'worst'")
    n = cfg.scenarios.n if n is None else n
    seed = cfg.scenarios.seed if seed is None else seed
    var = cfg.dro.var()
    if worst is None:
        worst = worst_case_margin(AmbiguitySet(art.reference, art.radius), var)
    deficits, g0s = event_lifts(cfg, art.model, n, seed)
    dist = art.reference if distribution == "reference" else worst.worst
    scen = generate_scenarios(dist, n, art.model, g0s, seed + 1, deficits)
    cc = cfg.control
    runs = run_load_shed(scen, art.model, worst.zeta, cc.f_min, cc.R_weight, cc.horizon, cc.u_max)
    extra = {"zeta": worst.zeta, "radius": art.radius, "alpha": var.alpha,
             "distribution": dist.to_dict(), "infeasible": int(sum(not r.feasible for r in runs))}
    return make_report(f"loadshed_{distribution}", cfg, runs,
                       {"events": seed, "errors": seed + 1}, extra)


# ----------------------------------------------------------------------------
# baselines

def _problem_rows(problem: ControlProblem):
    f_free, S = problem.linear_map()
    lb, ub = problem.u_bounds
    nv = problem.n_decision
    eye = np.eye(nv)
    fin_lb, fin_ub = np.isfinite(lb), np.isfinite(ub)
    return f_free, S, np.vstack([eye[fin_lb], -eye[fin_ub]]), np.concatenate([lb[fin_lb], -ub[fin_ub]])


def baseline_so(errors, problem: ControlProblem) -> ControlSolution:
    """Scenario approach: one constraint ``f̄_t − f_min >= e_i`` per sample and step."""
    e = np.asarray(errors, dtype=float).ravel()
    if len(e) < 1:
        raise ValueError("need at least one sampled error")
    f_free, S, Gb, hb = _problem_rows(problem)
    T = problem.horizon
    G = np.vstack([np.tile(S, (len(e), 1)), Gb])
    h = np.concatenate([(problem.f_min + e[:, None] - f_free[None, :]).ravel(), hb])
    H = 2.0 * problem.R
    res = solve_qp(H, None, G, h)
    v = res.x
    lam = res.multipliers
    step_lam = lam[: len(e) * T].reshape(len(e), T).sum(axis=0)
    return ControlSolution(v, float(v @ problem.R @ v),
                           [int(t) for t in np.flatnonzero(step_lam > 1e-8)],
                           kkt_residual(H, None, G, h, v, lam), lam, f_free + S @ v)


def baseline_ro(history, problem: ControlProblem) -> ControlSolution:
    """Robust margin: the largest shortfall seen in the history."""
    h = np.asarray(history, dtype=float).ravel()
    if len(h) < 1:
        raise ValueError("history must be non-empty")
    return solve_drefc_u(replace(problem, zeta=float(h.max()), operators=problem.operators))


def base_event_lift(cfg: ExperimentConfig, model: KoopmanModel, deficit: float | None = None,
                    seed: int | None = None) -> np.ndarray:
    st = cfg.study
    d = st.base_deficit if deficit is None else deficit
    s = st.base_seed if seed is None else seed
    dc = cfg.data
    tr = sfr.simulate(cfg.plant, sfr.Disturbance(dc.onset_time, d),
                      horizon=dc.anchor_time + model.dt, seed=s)
    ja = int(round(dc.anchor_time / model.dt))
    return lift(model.dictionary, tr.freq_dev[: ja * model.stride + 1: model.stride], np.zeros(ja))


def cost_ratio_study(cfg: ExperimentConfig, art: Artifacts, g0=None, confidences=None) -> dict:
    """DREFC and RO shedding costs on one event across confidence levels.

    The RO margin is the largest shortfall over all steps of all training
    trajectories, as a robust design must hold at every step.
    """
    g0 = base_event_lift(cfg, art.model) if g0 is None else g0
    confidences = cfg.study.confidences if confidences is None else confidences
    cc = cfg.control
    R = art.model.dt if cc.R_weight is None else cc.R_weight
    prob = one_shot_problem(art.model, g0, 0.0, cc.f_min, R, cc.horizon, cc.u_max)
    prob.operators = prediction_operators(art.model, cc.horizon)
    # the robust margin covers every frequency error seen in the history
    ro = baseline_ro(art.step_shortfall, prob)
    ro_nadir = baseline_ro(art.nadir_shortfall, prob)
    rows = []
    for c in confidences:
        wc = worst_case_margin(AmbiguitySet(art.reference, art.radius), cfg.dro.var(1.0 - c))
        sol = solve_drefc_u(replace(prob, zeta=wc.zeta, operators=prob.operators))
        rows.append({"confidence": c, "zeta": wc.zeta, "drefc_cost": sol.cost,
                     "ro_cost": ro.cost, "ratio": _ratio(sol.cost, ro.cost),
                     "ratio_nadir_history": _ratio(sol.cost, ro_nadir.cost)})
    return {"ro_zeta": float(art.step_shortfall.max()),
            "ro_zeta_nadir_history": float(art.nadir_shortfall.max()), "rows": rows}


def _ratio(a: float, b: float) -> float:
    if b > 0:
        return a / b
    return 0.0 if a == 0 else float("inf")


# ----------------------------------------------------------------------------
# timing

def timing_study(cfg: ExperimentConfig, art: Artifacts, counts=None, repeats=None,
                 g0=None) -> dict:
    """Median wall-clock of DREFC (lower + upper problem) and of the scenario baseline.

    Only the optimisation is timed. Every round runs each (method, count)
    pair once in shuffled order, so slow drift in machine load and cache
    effects spread evenly over the counts.
    """
    counts = tuple(cfg.timing.counts if counts is None else counts)
    if list(counts) != sorted(counts):
        raise ValueError("counts must be ascending")
    repeats = cfg.timing.repeats if repeats is None else repeats
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    g0 = base_event_lift(cfg, art.model) if g0 is None else g0
    cc = cfg.control
    R = art.model.dt if cc.R_weight is None else cc.R_weight
    prob = one_shot_problem(art.model, g0, 0.0, cc.f_min, R, cc.horizon, cc.u_max)
    prob.operators = prediction_operators(art.model, cc.horizon)
    pool = sample(art.reference, max(counts), cfg.timing.seed)
    aset = AmbiguitySet(art.reference, art.radius)
    var = cfg.dro.var()

    def drefc(_n):
        wc = worst_case_margin(aset, var)
        return solve_drefc_u(replace(prob, zeta=wc.zeta, operators=prob.operators))

    def so(n):
        return baseline_so(pool[:n], prob)

    for n in counts:  # untimed warm-up: caches, allocator, lazy imports
        drefc(n)
        so(n)
    samples = {"drefc": {n: [] for n in counts}, "so": {n: [] for n in counts}}
    jobs = [(name, fn, n) for n in counts for name, fn in (("drefc", drefc), ("so", so))]
    rng = np.random.default_rng(cfg.timing.seed)
    for _ in range(repeats):
        # shuffled each round so no count always follows the heaviest solve
        for j in rng.permutation(len(jobs)):
            name, fn, n = jobs[j]
            t0 = time.perf_counter()
            fn(n)
            samples[name][n].append(time.perf_counter() - t0)
    med = {name: [float(np.median(samples[name][n])) for n in counts] for name in samples}
    return {"counts": list(counts), "repeats": repeats, "median": med}


def timing_flatness(curve) -> float:
    """Largest relative deviation from the curve's median."""
    c = np.asarray(curve, dtype=float)
    m = float(np.median(c))
    return float(np.max(np.abs(c - m)) / m)


def timing_slope(counts, curve) -> float:
    """Least-squares slope over the count range, relative to the curve mean."""
    x = np.asarray(counts, dtype=float)
    y = np.asarray(curve, dtype=float)
    slope = np.polyfit(x, y, 1)[0]
    return float(abs(slope) * (x.max() - x.min()) / y.mean())


# ----------------------------------------------------------------------------
# ICDF approximation study

def random_gmm(rng: np.random.Generator, K: int, scale_range=(0.1, 10.0),
               mean_spread: float = 1.0, std_range=(0.2, 1.0)) -> Gmm:
    """Random mixture: log-uniform overall scale, then shape parameters in that scale."""
    lo, hi = scale_range
    sc = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    w = rng.dirichlet(np.ones(K))
    m = sc * rng.uniform(-mean_spread, mean_spread, K)
    s = sc * rng.uniform(std_range[0], std_range[1], K)
    return Gmm(w, m, s)


def order_reversal_rate(exact, approx) -> float:
    """Fraction of pairs whose ordering differs between the two value lists."""
    a = np.asarray(exact, dtype=float)
    b = np.asarray(approx, dtype=float)
    iu = np.triu_indices(len(a), 1)
    da = np.sign(a[:, None] - a[None, :])[iu]
    db = np.sign(b[:, None] - b[None, :])[iu]
    return float(np.mean(da != db))


def icdf_study(n_gmms: int = 100, alphas=(0.01, 0.05, 0.1, 0.15, 0.2), Ks=(3, 4, 5),
               seed: int = 0, **family) -> dict:
    """Exact vs component-weighted quantiles over random mixtures.

    Reports the Pearson correlation per ``(K, α)`` and the pairwise
    order-reversal rate, each cell with its own mixture draw.
    """
    if n_gmms < 2:
        raise ValueError("n_gmms must be >= 2")
    root = np.random.SeedSequence(seed)
    cells = []
    for K, child in zip(Ks, root.spawn(len(Ks))):
        rng = np.random.default_rng(child)
        gmms = [random_gmm(rng, K, **family) for _ in range(n_gmms)]
        for a in alphas:
            ex = np.array([exact_icdf(g, 1 - a) for g in gmms])
            ap = np.array([approx_icdf(g, 1 - a) for g in gmms])
            cells.append({"K": K, "alpha": a, "pearson": float(np.corrcoef(ex, ap)[0, 1]),
                          "reversal": order_reversal_rate(ex, ap)})
    return {"n_gmms": n_gmms, "cells": cells}


# ----------------------------------------------------------------------------
# error-model studies

def gmm_vs_gaussian_rmse(samples, K: int = 3, bins: int = 30, seed: int = 0) -> dict:
    x = np.asarray(samples, dtype=float)
    g, _ = fit_em(x, K=K, seed=seed)
    single = Gmm([1.0], [x.mean()], [x.std()])
    return {"gmm": histogram_rmse(g, x, bins), "gaussian": histogram_rmse(single, x, bins)}


def conditional_density_study(joint: JointGmm, pairs) -> dict:
    """Mean log-density of held-out next errors: conditional vs marginal."""
    P = np.asarray(pairs, dtype=float)
    M = joint.n_past
    marg = marginal(joint, "future")
    cond = np.empty(len(P))
    for i, row in enumerate(P):
        cond[i] = float(logpdf(condition(joint, row[:M]), row[M:][0]))
    return {"conditional": float(cond.mean()),
            "marginal": float(np.mean(logpdf(marg, P[:, M])))}


def holdout_step_shortfall(cfg: ExperimentConfig, art: Artifacts) -> np.ndarray:
    dc = cfg.data
    ds = sfr.generate_dataset(cfg.plant, cfg.study.holdout_trajectories, dc.deficit_range,
                              dc.horizon, cfg.study.holdout_seed, dc.onset_time,
                              dc.control_amplitude, dc.control_hold, dc.anchor_time)
    errs = collect_errors(art.model, ds, "recorded", dc.anchor_time, cfg.errors.joint_horizon)
    return -np.stack([e.errors for e in errs])


# ----------------------------------------------------------------------------
# DC regulation: online conditioning vs a static reference

def dc_scenarios(cfg: ExperimentConfig, n: int, seed: int):
    """Per-scenario disturbances and plant-noise seeds from one root seed."""
    root = np.random.SeedSequence(seed)
    lo, hi = cfg.data.deficit_range
    deficits = np.random.default_rng(root).uniform(lo, hi, n)
    seeds = [int(c.generate_state(1)[0]) for c in root.spawn(n)]
    return deficits, seeds


def dc_study(cfg: ExperimentConfig, art: Artifacts, n: int | None = None,
             seed: int | None = None, modes=("online", "static")) -> dict:
    """Closed-loop runs on the same scenarios for each mode; one report per mode."""
    if art.joint is None:
        raise ValueError("artifacts need the joint error mixture (with_joint=True)")
    n = cfg.scenarios.n if n is None else n
    seed = cfg.scenarios.seed if seed is None else seed
    deficits, seeds = dc_scenarios(cfg, n, seed)
    var = cfg.dro.var()
    ops = prediction_operators(art.model, cfg.dc.control_horizon)
    static_ref = marginal(art.joint, "future")
    out = {}
    for mode in modes:
        runs, windows = [], []
        for i in range(n):
            t0 = time.perf_counter()
            res = closed_loop_dc(cfg.plant, sfr.Disturbance(cfg.data.onset_time, float(deficits[i])),
                                 art.model, art.joint, art.radius, var, cfg.dc, seeds[i],
                                 static_ref if mode == "static" else None, ops)
            elapsed = time.perf_counter() - t0
            # realized vs the last anchored prediction of the nadir
            runs.append(ScenarioRun(i, float(res.states[-1].past_errors[-1])
                                    if len(res.states[-1].past_errors) else 0.0,
                                    float("nan"), res.nadir, res.nadir >= cfg.dc.f_min,
                                    res.nadir > ECONOMY_THRESHOLD, res.cost, elapsed,
                                    float(res.controls.max()), float(deficits[i]),
                                    res.infeasible_windows == 0))
            windows.append([s.zeta for s in res.states])
        rep = make_report(f"dc_{mode}", cfg, runs, {"scenarios": seed},
                          {"zeta_by_window": windows, "radius": art.radius})
        rep.f_min = cfg.dc.f_min
        rep.indicators = rep.recompute()
        out[mode] = rep
    return out


# ----------------------------------------------------------------------------
# threshold checks (used by ``--check``)

SAFETY_REFERENCE_BAND = (0.93, 0.99)
SAFETY_WORST_BAND = (0.93, 0.97)
ICDF_MIN_PEARSON = 0.95
ICDF_MAX_REVERSAL = 0.01
TIMING_MAX_SPREAD = 0.10


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def check_safety(reference: ExperimentReport, worst: ExperimentReport) -> list:
    rs, ws = reference.indicators["safety"], worst.indicators["safety"]
    lo, hi = SAFETY_REFERENCE_BAND
    wlo, whi = SAFETY_WORST_BAND
    return [Check("safety under reference", lo <= rs <= hi, f"{rs:.4f} in [{lo}, {hi}]"),
            Check("safety under worst case", wlo <= ws <= whi and ws <= rs,
                  f"{ws:.4f} in [{wlo}, {whi}] and <= {rs:.4f}")]


def check_icdf(study: dict, alpha: float = 0.05) -> list:
    cells = study["cells"]
    at = [c for c in cells if np.isclose(c["alpha"], alpha)]
    worst_r = min(c["pearson"] for c in at)
    worst_rev = max(c["reversal"] for c in cells)
    return [Check("icdf correlation", worst_r >= ICDF_MIN_PEARSON,
                  f"min Pearson at alpha={alpha}: {worst_r:.4f} >= {ICDF_MIN_PEARSON}"),
            Check("icdf order reversal", worst_rev <= ICDF_MAX_REVERSAL,
                  f"max reversal over cells: {worst_rev:.4f} <= {ICDF_MAX_REVERSAL}")]


def check_timing(study: dict) -> list:
    d = study["median"]["drefc"]
    s = study["median"]["so"]
    spread = timing_flatness(d)
    rising = bool(np.all(np.diff(s) > 0))
    return [Check("drefc timing flat", spread <= TIMING_MAX_SPREAD,
                  f"max deviation from median {spread:.3f} <= {TIMING_MAX_SPREAD}"),
            Check("so timing increasing", rising, "medians " + ", ".join(f"{x:.2e}" for x in s))]


def check_cost_ratio(study: dict) -> list:
    r = np.array([row["ratio"] for row in study["rows"]])
    return [Check("cost below robust", bool(np.all(r < 1)), f"max ratio {r.max():.4f} < 1"),
            Check("cost ratio monotone", bool(np.all(np.diff(r) >= 0)),
                  "ratios " + ", ".join(f"{x:.3f}" for x in r))]


def check_dc(reports: dict) -> list:
    on, st = reports["online"].indicators["safety"], reports["static"].indicators["safety"]
    return [Check("online update benefit", on >= st, f"online {on:.4f} >= static {st:.4f}")]
