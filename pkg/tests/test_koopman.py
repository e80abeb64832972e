import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drefc.koopman import (DictionarySpec, KoopmanModel, collect_errors, lift, lift_series,
                           one_step_residual, predict, prediction_operators, train_edmd)
from drefc.sfr import SfrParams, Trajectory, generate_dataset


def arx_dataset(a, b, n_traj=5, n=200, seed=0, dt=0.1):
    """Trajectories of ω_{t+1} = a·[ω_t .. ω_{t-d}] + b u_t with random inputs."""
    rng = np.random.default_rng(seed)
    d = len(a) - 1
    out = []
    for i in range(n_traj):
        w = np.zeros(n + 1)
        w[: d + 1] = rng.normal(0, 0.1, d + 1)
        u = rng.normal(0, 1, n + 1)
        for t in range(d, n):
            w[t + 1] = a @ w[t - d: t + 1][::-1] + b * u[t]
        out.append(Trajectory(dt * np.arange(n + 1), w, u, i))
    return out


def random_model(rng, spec, m=1, scale=0.3):
    n = spec.lift_dim
    A = rng.normal(0, scale / np.sqrt(n), (n, n))
    return KoopmanModel(A, rng.normal(0, 1, (n, m)), spec)


def test_lift_trivial_cases():
    assert np.array_equal(lift(DictionarySpec(2, include_constant=False), [0, 0, 0]), [0, 0, 0])
    assert lift(DictionarySpec(2), [0, 0, 0])[-1] == 1.0
    spec = DictionarySpec.with_grid(2, 3, -0.1, 0.1)
    g = lift(spec, [0.3, 0.2, 0.1])
    assert g[0] == 0.1 and g[2] == 0.3       # newest first
    assert g[3 + 2] == pytest.approx(1.0)    # RBF centred at 0.1
    with pytest.raises(ValueError):
        lift(spec, [0.1, 0.2])


def test_lift_series_matches_pointwise_lift():
    spec = DictionarySpec.with_grid(3, 4, -0.05, 0.0, input_delays=2)
    rng = np.random.default_rng(1)
    w = rng.normal(0, 0.02, 30)
    u = rng.normal(0, 1, 29)
    G = lift_series(spec, w, u)
    for j in range(len(G)):
        i = j + spec.delay_count
        assert np.allclose(G[j], lift(spec, w[: i + 1], u[:i]), atol=0, rtol=0)


def test_recovers_known_linear_pair():
    a = np.array([1.2, -0.5, 0.1])
    ds = arx_dataset(a, 0.7)
    spec = DictionarySpec(2, include_constant=False)
    m = train_edmd(ds, spec, ridge=0.0, stride=1)
    A_true = np.zeros((3, 3))
    A_true[0] = a
    A_true[1, 0] = A_true[2, 1] = 1.0
    assert np.allclose(m.A, A_true, atol=1e-8)
    assert np.allclose(m.B[:, 0], [0.7, 0, 0], atol=1e-8)
    errs = collect_errors(m, ds, "recorded", anchor_time=1.0, horizon=50)
    assert max(np.abs(e.errors).max() for e in errs) < 1e-8


def test_no_input_excitation():
    ds = [Trajectory(t.times, t.freq_dev, np.zeros_like(t.injected_power), t.noise_seed)
          for t in arx_dataset(np.array([0.9, -0.2]), 0.0)]
    spec = DictionarySpec(1, include_constant=False)
    with pytest.raises(np.linalg.LinAlgError):
        train_edmd(ds, spec, ridge=0.0, stride=1)
    m = train_edmd(ds, spec, ridge=1e-6, stride=1)
    assert np.allclose(m.B, 0.0)


def test_residual_non_increasing_in_nested_dictionaries():
    ds = generate_dataset(SfrParams(), 30, horizon=20.0, seed=3, control_amplitude=0.05,
                          control_start=2.0)
    res = [train_edmd(ds, DictionarySpec(d), 0.0, 10, start_time=2.0).training_residual
           for d in range(1, 8)]
    assert np.all(np.diff(res) <= 1e-15)


def test_sfr_one_step_residual_on_held_out():
    kw = dict(horizon=60.0, control_amplitude=0.05, control_start=2.0)
    train = generate_dataset(SfrParams(), 100, seed=1, **kw)
    test = generate_dataset(SfrParams(), 30, seed=2, **kw)
    spec = DictionarySpec.with_grid(10, 10, -0.06, 0.0, input_delays=10)
    m = train_edmd(train, spec, 1e-8, 10, 2.0)
    assert one_step_residual(m, test, 2.0) < 10 * 1e-4


def test_predict_trivial_and_homogeneous():
    rng = np.random.default_rng(0)
    spec = DictionarySpec(3, input_delays=1)
    m = random_model(rng, spec)
    assert np.all(predict(m, np.zeros(spec.lift_dim), None, 20) == 0.0)
    g0 = rng.normal(size=spec.lift_dim)
    f = predict(m, g0, None, 10)
    for t in range(1, 11):
        assert f[t - 1] == pytest.approx((np.linalg.matrix_power(m.A, t) @ g0)[0], abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 40))
def test_prediction_is_linear(seed, T):
    rng = np.random.default_rng(seed)
    spec = DictionarySpec(2, rbf_count=0, input_delays=2)
    m = random_model(rng, spec)
    g0 = rng.normal(size=spec.lift_dim)
    u = rng.normal(size=T)
    lhs = predict(m, g0, u, T)
    rhs = predict(m, g0, None, T) + predict(m, np.zeros_like(g0), u, T)
    assert np.allclose(lhs, rhs, atol=1e-12 * max(1, np.abs(lhs).max()))
    Phi, Gamma = prediction_operators(m, T)
    assert np.allclose(Phi @ g0 + Gamma @ u, lhs, atol=1e-12 * max(1, np.abs(lhs).max()))


def test_output_is_first_coordinate():
    spec = DictionarySpec.with_grid(4, 3, -0.05, 0.0)
    m = random_model(np.random.default_rng(0), spec)
    w = np.random.default_rng(1).normal(0, 0.01, 10)
    assert m.C @ lift(spec, w) == pytest.approx([w[-1]])


def test_collect_errors_replays_prediction():
    ds = generate_dataset(SfrParams(), 10, horizon=30.0, seed=5, control_amplitude=0.05,
                          control_start=2.0)
    spec = DictionarySpec.with_grid(10, 10, -0.06, 0.0, input_delays=10)
    m = train_edmd(ds, spec, 1e-8, 10, 2.0)
    errs = collect_errors(m, ds, "recorded", 2.0, 100)
    assert len(errs) == 10
    tr = ds[4]
    w = tr.freq_dev[::10]
    u = tr.injected_power[:-1].reshape(-1, 10).mean(axis=1)
    f = predict(m, lift(spec, w[:21], u[:20]), u[20:120], 100)
    assert np.allclose(errs[4].errors, w[21:121] - f, atol=1e-14)
    assert errs[4].nadir_error == pytest.approx(w[21:121].min() - f.min())
    with pytest.raises(ValueError):
        collect_errors(m, ds, "bogus")


def test_model_validation():
    spec = DictionarySpec(2)
    with pytest.raises(ValueError):
        KoopmanModel(np.eye(3), np.ones((4, 1)), spec)
    with pytest.raises(ValueError):
        DictionarySpec(-1)
    with pytest.raises(ValueError):
        predict(KoopmanModel(np.eye(4), np.ones((4, 1)), spec), np.zeros(3), None, 2)
