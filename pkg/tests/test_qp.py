import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from drefc.qp import InfeasibleError, kkt_residual, solve_qp


def random_spd(rng, n):
    L = rng.normal(size=(n, n))
    return L @ L.T + 0.5 * np.eye(n)


def test_unconstrained_minimiser():
    rng = np.random.default_rng(0)
    H, c = random_spd(rng, 4), rng.normal(size=4)
    res = solve_qp(H, c, np.zeros((0, 4)), np.zeros(0))
    assert np.allclose(res.x, -np.linalg.solve(H, c))


def test_single_constraint_closed_form():
    a = np.array([1.0, 2.0, -0.5])
    b = 3.0
    res = solve_qp(2 * np.eye(3), None, a[None], [b])
    assert np.allclose(res.x, a * b / (a @ a), atol=1e-14)
    assert res.active == [0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 12))
def test_matches_slsqp(seed, n, m):
    rng = np.random.default_rng(seed)
    H, c = random_spd(rng, n), rng.normal(size=n)
    G = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    h = G @ x0 - rng.uniform(0, 1, m)       # feasible by construction
    res = solve_qp(H, c, G, h)
    assert kkt_residual(H, c, G, h, res.x, res.multipliers) < 1e-9
    ref = minimize(lambda x: 0.5 * x @ H @ x + c @ x, x0, jac=lambda x: H @ x + c,
                   constraints=[{"type": "ineq", "fun": lambda x: G @ x - h, "jac": lambda x: G}],
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    assert res.objective <= ref.fun + 1e-7 * max(1, abs(ref.fun))


def test_infeasible_detected():
    G = np.array([[1.0], [-1.0]])
    h = np.array([1.0, 0.0])   # x >= 1 and x <= 0
    with pytest.raises(InfeasibleError):
        solve_qp(np.eye(1), None, G, h)


def test_redundant_constraints():
    G = np.tile(np.array([[1.0, 1.0]]), (50, 1))
    h = np.linspace(0, 2, 50)
    res = solve_qp(np.eye(2), None, G, h)
    assert np.allclose(res.x, [1.0, 1.0])
    assert kkt_residual(np.eye(2), None, G, h, res.x, res.multipliers) < 1e-12
