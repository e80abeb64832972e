import numpy as np
import pytest

from oracles import is_feasible, lp_feasible, perturbation_lowers_cost, random_problem

from drefc.ambiguity import AmbiguitySet
from drefc.control import (ControlProblem, DcConfig, _blocked_map, closed_loop_dc, max_margin,
                           one_shot_load_shed, one_shot_problem, solve_drefc_u)
from drefc.dro import VarSpec, approx_icdf
from drefc.gmm import Gmm, JointGmm, condition
from drefc.koopman import DictionarySpec, lift, predict, train_edmd
from drefc.qp import InfeasibleError
from drefc.sfr import Disturbance, SfrParams, generate_dataset, simulate

LINEAR = SfrParams(saturation=None, noise_std=0.0)


@pytest.fixture(scope="module")
def sfr_model():
    ds = generate_dataset(SfrParams(), 80, horizon=40.0, seed=7, control_amplitude=0.05,
                          control_start=2.0)
    spec = DictionarySpec.with_grid(10, 10, -0.06, 0.0, input_delays=10)
    return train_edmd(ds, spec, 1e-8, 10, 2.0)


@pytest.fixture(scope="module")
def exact_model():
    """ARX(2, 2) on the linear plant reproduces it to rounding error."""
    ds = generate_dataset(LINEAR, 20, horizon=20.0, seed=0, control_amplitude=0.05,
                          control_start=2.0)
    return train_edmd(ds, DictionarySpec(2, input_delays=2), 0.0, 10, 2.0)


def event_lift(model, params, deficit, seed=0):
    tr = simulate(params, Disturbance(1.0, deficit), horizon=2.0 + model.dt, seed=seed)
    return lift(model.dictionary, tr.freq_dev[:201:10], np.zeros(20))


def test_zero_control_when_already_safe():
    rng = np.random.default_rng(0)
    p = random_problem(rng, 0.0)
    p.f_min = -1e6
    sol = solve_drefc_u(p)
    assert np.all(sol.u == 0) and sol.cost == 0 and sol.active_steps == []


def test_single_violated_constraint_closed_form():
    # one step, identity map: the only constraint is u >= b
    spec = DictionarySpec(0, include_constant=False, input_delays=0)
    from drefc.koopman import KoopmanModel
    m = KoopmanModel(np.zeros((1, 1)), np.ones((1, 1)), spec)
    p = ControlProblem(m, np.zeros(1), np.eye(1), -1.0, 1.5, 1, (-np.inf, np.inf))
    sol = solve_drefc_u(p)
    assert sol.u == pytest.approx([0.5])
    assert sol.active_steps == [0]


@pytest.mark.parametrize("seed", range(40))
def test_random_instances_certified(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    if not lp_feasible(p):
        with pytest.raises(InfeasibleError) as exc:
            solve_drefc_u(p)
        assert exc.value.max_margin < float(np.max(p.margins()))
        return
    sol = solve_drefc_u(p)
    assert sol.kkt_residual < 1e-6
    assert is_feasible(p, sol.u, 1e-9)
    assert not perturbation_lowers_cost(p, sol.u, rng)
    lam = sol.multipliers[: p.horizon]
    assert sol.active_steps == [int(t) for t in np.flatnonzero(lam > 1e-8)]
    # sampling oracle within the box
    lb, ub = p.u_bounds
    hi = np.where(np.isfinite(ub), ub, 3 * max(1.0, float(np.abs(sol.u).max())))
    cands = sol.u + rng.uniform(-1, 1, (10_000, len(sol.u))) * (hi - lb)
    cands = np.clip(cands, lb, hi)
    f_free, S = p.linear_map()
    ok = np.all(cands @ S.T + f_free - p.f_min - p.margins() >= 0, axis=1)
    if ok.any():
        costs = np.einsum("ni,ij,nj->n", cands[ok], p.R, cands[ok])
        assert sol.cost <= costs.min() + 1e-12


def test_max_margin_matches_infeasibility_threshold():
    rng = np.random.default_rng(3)
    p = random_problem(rng, 0.0)
    lb, ub = p.u_bounds
    f_free, S = p.linear_map()
    best = max_margin(f_free, S, p.f_min, lb, ub)
    if np.isfinite(best):
        p.zeta = best - 1e-6
        solve_drefc_u(p)
        p.zeta = best + 1e-6
        with pytest.raises(InfeasibleError):
            solve_drefc_u(p)


def test_cost_monotone_in_margin(sfr_model):
    g0 = event_lift(sfr_model, SfrParams(), 0.12)
    costs = [solve_drefc_u(one_shot_problem(sfr_model, g0, z, -0.015, 0.1, 150)).cost
             for z in np.linspace(0, 0.004, 9)]
    assert np.all(np.diff(costs) >= 0)


def test_load_shed_reference_margin_and_monotonicity(sfr_model):
    ref = Gmm([0.5, 0.5], [0.0, 0.001], [0.001, 0.0005])
    var = VarSpec(0.05)
    sheds = []
    for d in (0.10, 0.12, 0.14):
        g0 = event_lift(sfr_model, SfrParams(), d)
        sol = one_shot_load_shed(sfr_model, g0, AmbiguitySet(ref, 0.0), var, -0.015, 0.1)
        sheds.append(sol.u[0])
        # binding step sits exactly at f_min + approx_icdf(reference)
        if sol.active_steps:
            t = sol.active_steps[0]
            assert sol.predicted[t] == pytest.approx(-0.015 + approx_icdf(ref, 0.95), abs=1e-12)
    assert np.all(np.diff(sheds) > 0)
    small = event_lift(sfr_model, SfrParams(), 0.02)
    assert one_shot_load_shed(sfr_model, small, AmbiguitySet(ref, 0.0), var, -0.015).u[0] == 0
    g0 = event_lift(sfr_model, SfrParams(), 0.12)
    by_gamma = [one_shot_load_shed(sfr_model, g0, AmbiguitySet(ref, g), var, -0.015).u[0]
                for g in (0.0, 1e-8, 1e-7, 1e-6)]
    assert np.all(np.diff(by_gamma) >= 0)


def test_problem_validation(sfr_model):
    g0 = np.zeros(sfr_model.lift_dim)
    with pytest.raises(ValueError):
        ControlProblem(sfr_model, g0, -np.eye(1), 0.0, 0.0, 3)
    with pytest.raises(ValueError):
        ControlProblem(sfr_model, g0, np.array([[1.0, 2.0], [0.0, 1.0]]), 0.0, 0.0, 2)
    with pytest.raises(ValueError):
        ControlProblem(sfr_model, g0, 1.0, 0.0, np.nan, 3)
    with pytest.raises(ValueError):
        ControlProblem(sfr_model, g0, 1.0, 0.0, 0.0, 3, (1.0, 0.0))


def test_blocked_map():
    E = _blocked_map(7, 3)
    assert E.shape == (7, 3)
    assert np.array_equal(E.sum(axis=1), np.ones(7))
    assert E[6, 2] == 1 and E[3, 1] == 1


def independent_joint(sd=1e-4):
    return JointGmm([1.0], [[0.0, 0.0]], [np.diag([sd ** 2, sd ** 2])], 1)


def test_dc_consistency_with_exact_model(exact_model):
    cfg = DcConfig(f_min=-0.015, n_windows=20, run_time=20.0)
    joint = independent_joint()
    var = VarSpec(0.05)
    dist = Disturbance(1.0, 0.12)
    run = closed_loop_dc(LINEAR, dist, exact_model, joint, 0.0, var, cfg, seed=0)
    # errors vanish and conditioning on them returns the marginal margin
    assert np.abs(np.concatenate([s.past_errors for s in run.states])).max() < 1e-8
    zeta = approx_icdf(Gmm([1.0], [0.0], [1e-4]), 0.95)
    assert np.allclose([s.zeta for s in run.states], zeta, rtol=0, atol=1e-15)
    assert run.infeasible_windows == 0
    # first window applies the first block of the open-loop plan
    g0 = lift(exact_model.dictionary, run.freq_dev[:201:10], np.zeros(20))
    E = _blocked_map(cfg.control_horizon, cfg.block)
    plan = solve_drefc_u(ControlProblem(exact_model, g0, exact_model.dt * cfg.block * np.eye(E.shape[1]),
                                        cfg.f_min, zeta, cfg.control_horizon, (0.0, cfg.u_max), E))
    assert run.states[0].applied[0] == pytest.approx(plan.u[0], abs=1e-12)
    # the plant follows the model under the applied inputs
    applied = run.states[-1].applied
    pred = predict(exact_model, g0, applied, len(applied))
    meas = run.clean_freq_dev[210: 200 + 10 * len(applied) + 1: 10]
    assert np.allclose(pred, meas, atol=1e-8)
    assert run.nadir >= cfg.f_min - 1e-9
    assert applied.max() > 0


def test_dc_determinism(exact_model):
    cfg = DcConfig(n_windows=6, run_time=10.0)
    a = closed_loop_dc(SfrParams(), Disturbance(1.0, 0.12), exact_model, independent_joint(),
                       1e-8, VarSpec(0.05), cfg, seed=3)
    b = closed_loop_dc(SfrParams(), Disturbance(1.0, 0.12), exact_model, independent_joint(),
                       1e-8, VarSpec(0.05), cfg, seed=3)
    assert [s.zeta for s in a.states] == [s.zeta for s in b.states]
    assert np.array_equal(a.freq_dev, b.freq_dev) and np.array_equal(a.controls, b.controls)


def test_large_past_error_raises_margin():
    joint = JointGmm([1.0], [[0.0, 0.0]], [[[1e-6, 0.8e-6], [0.8e-6, 1e-6]]], 1)
    var = VarSpec(0.05)
    from drefc.dro import worst_case_margin
    from drefc.gmm import marginal
    base = worst_case_margin(AmbiguitySet(marginal(joint, "future"), 1e-8), var).zeta
    high = worst_case_margin(AmbiguitySet(condition(joint, [3e-3]), 1e-8), var).zeta
    assert high > base


def test_dc_validation(exact_model):
    with pytest.raises(ValueError):
        closed_loop_dc(LINEAR, Disturbance(1.0, 0.1), exact_model, None, 0.0, VarSpec(0.05),
                       DcConfig())
    with pytest.raises(ValueError):
        closed_loop_dc(LINEAR, Disturbance(1.0, 0.1), exact_model, independent_joint(), 0.0,
                       VarSpec(0.05), DcConfig(run_time=5.0))
