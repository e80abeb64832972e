import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from drefc.gmm import (SIGMA_FLOOR, DegenerateDataWarning, Gmm, JointGmm, cdf, condition,
                       fit_em, histogram_rmse, logpdf, marginal, mixture_from_dict, pdf, sample)


def random_gmm(rng, K):
    return Gmm(rng.dirichlet(np.ones(K)), rng.normal(0, 2, K), rng.uniform(0.2, 1.5, K))


def random_joint(rng, G, D, n_past):
    covs = []
    for _ in range(G):
        L = rng.normal(0, 1, (D, D))
        covs.append(L @ L.T + 0.3 * np.eye(D))
    return JointGmm(rng.dirichlet(np.ones(G)), rng.normal(0, 1, (G, D)), np.array(covs), n_past)


def test_pdf_trivial():
    assert pdf(Gmm([1.0], [0.0], [1.0]), 0.0) == pytest.approx(1 / np.sqrt(2 * np.pi))
    x = np.linspace(-5, 5, 41)
    assert np.allclose(pdf(Gmm([0.5, 0.5], [0, 0], [1, 1]), x), stats.norm.pdf(x), rtol=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_pdf_integrates_to_one(seed):
    g = random_gmm(np.random.default_rng(seed), 3)
    lo = float(np.min(g.means - 12 * g.stds))
    hi = float(np.max(g.means + 12 * g.stds))
    val, _ = integrate.quad(lambda x: float(pdf(g, x)), lo, hi, points=list(g.means), limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_cdf_trivial_and_limits():
    g = Gmm([1.0], [0.3], [2.0])
    assert cdf(g, 0.3) == pytest.approx(0.5)
    assert cdf(g, 0.3 - 81 * 2.0) == 0.0
    assert cdf(g, 0.3 + 81 * 2.0) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_cdf_matches_quadrature(seed):
    rng = np.random.default_rng(seed + 10)
    g = random_gmm(rng, 3)
    lo = float(np.min(g.means - 40 * g.stds))
    for x in rng.normal(0, 2, 4):
        val, _ = integrate.quad(lambda t: float(pdf(g, t)), lo, x, points=[m for m in g.means if lo < m < x],
                                limit=400, epsabs=1e-12, epsrel=1e-12)
        assert cdf(g, x) == pytest.approx(val, abs=1e-8)


def test_em_degenerate_data():
    with pytest.warns(DegenerateDataWarning):
        g, rep = fit_em(np.full(50, 0.25), K=1)
    assert g.means[0] == 0.25 and g.stds[0] == SIGMA_FLOOR
    assert rep.degenerate


def test_em_two_cluster_recovery():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-1, 0.1, 5000), rng.normal(1, 0.1, 5000)])
    g, rep = fit_em(x, K=2, seed=1)
    order = np.argsort(g.means)
    assert np.allclose(g.means[order], [-1, 1], atol=0.02)
    assert np.allclose(g.weights, 0.5, atol=0.02)
    assert np.allclose(g.stds, 0.1, atol=0.01)
    assert rep.monotone and rep.converged


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4))
def test_em_log_likelihood_non_decreasing(seed, K):
    rng = np.random.default_rng(seed)
    x = sample(random_gmm(rng, 3), 300, rng)
    _, rep = fit_em(x, K=K, seed=seed, restarts=3)
    assert len(rep.restart_histories) == 3
    assert rep.monotone


def test_em_joint_monotone_and_recovery():
    rng = np.random.default_rng(3)
    truth = random_joint(rng, 2, 2, 1)
    truth = JointGmm([0.4, 0.6], truth.means * 4, truth.covs * 0.05, 1)
    x = sample(truth, 20000, 1)
    j, rep = fit_em(x, K=2, seed=0, n_past=1)
    assert rep.monotone
    order = np.argsort(j.means[:, 0])
    torder = np.argsort(truth.means[:, 0])
    assert np.allclose(j.weights[order], truth.weights[torder], atol=0.02)
    assert np.allclose(j.means[order], truth.means[torder], atol=0.05)


def test_em_beats_single_gaussian_on_bimodal_data():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(-0.002, 0.0005, 200), rng.normal(0.001, 0.001, 100)])
    g, _ = fit_em(x, K=3)
    single = Gmm([1.0], [x.mean()], [x.std()])
    assert histogram_rmse(g, x) < histogram_rmse(single, x)


def test_sample_counts_and_weights():
    g = Gmm([0.2, 0.5, 0.3], [-5, 0, 5], [0.1, 0.1, 0.1])
    assert sample(g, 700, 0).shape == (700,)
    x = sample(g, 100_000, 1)
    frac = np.array([np.mean(x < -2.5), np.mean(np.abs(x) < 2.5), np.mean(x > 2.5)])
    assert np.all(np.abs(frac - g.weights) < 3 / np.sqrt(len(x)))
    tiny = sample(Gmm([1.0], [0.7], [0.0]), 50, 2)
    assert np.allclose(tiny, 0.7, atol=1e-4)


def test_marginal_cases():
    rng = np.random.default_rng(5)
    j = random_joint(rng, 1, 3, 1)
    m = marginal(j, "past")
    assert isinstance(m, Gmm)
    assert m.stds[0] == pytest.approx(np.sqrt(j.covs[0, 0, 0]))
    fut = marginal(j, "future")
    assert isinstance(fut, JointGmm) and fut.dim == 2
    with pytest.raises(ValueError):
        marginal(j, "middle")


def test_marginal_matches_joint_integration():
    j = random_joint(np.random.default_rng(7), 2, 2, 1)
    mp = marginal(j, "past")
    for x in (-1.0, 0.2, 1.3):
        val, _ = integrate.quad(lambda y: float(pdf(j, np.array([x, y]))), -30, 30, limit=200)
        assert pdf(mp, x) == pytest.approx(val, rel=1e-8)


def test_condition_single_component_closed_form():
    rng = np.random.default_rng(2)
    j = random_joint(rng, 1, 3, 2)
    S, mu = j.covs[0], j.means[0]
    xp = rng.normal(size=2)
    m = mu[2] + S[2, :2] @ np.linalg.solve(S[:2, :2], xp - mu[:2])
    v = S[2, 2] - S[2, :2] @ np.linalg.solve(S[:2, :2], S[:2, 2])
    c = condition(j, xp)
    assert c.means[0] == pytest.approx(m, abs=1e-10)
    assert c.stds[0] ** 2 == pytest.approx(v, abs=1e-10)


def test_condition_independence_returns_marginal():
    covs = np.array([np.diag([1.0, 0.5]), np.diag([0.3, 2.0])])
    j = JointGmm([0.3, 0.7], [[0.0, 1.0], [0.0, -1.0]], covs, 1)
    fut = marginal(j, "future")
    for xp in (-2.0, 0.0, 3.0):
        c = condition(j, [xp])
        assert np.allclose(c.means, fut.means) and np.allclose(c.stds, fut.stds)
    # identical past blocks: weights unchanged as well
    assert np.allclose(condition(JointGmm([0.3, 0.7], j.means, np.array([np.diag([1.0, 0.5]),
                                                                          np.diag([1.0, 2.0])]), 1),
                                 [0.4]).weights, [0.3, 0.7])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_condition_contracts_and_normalizes(seed):
    rng = np.random.default_rng(seed)
    j = random_joint(rng, 3, 2, 1)
    c = condition(j, rng.normal(size=1))
    assert c.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(c.stds <= np.sqrt(j.covs[:, 1, 1]) + 1e-12)


def test_condition_raises_on_bad_past():
    j = random_joint(np.random.default_rng(0), 2, 2, 1)
    with pytest.raises(ValueError):
        condition(j, [0.0, 1.0])


def test_conditional_density_beats_marginal_on_correlated_data():
    rng = np.random.default_rng(4)
    n = 4000
    x = np.zeros(n + 1)
    for t in range(n):
        x[t + 1] = 0.9 * x[t] + rng.normal(0, 0.1)
    pairs = np.stack([x[:-1], x[1:]], axis=1)
    j, _ = fit_em(pairs[:3000], K=2, n_past=1)
    test = pairs[3000:]
    cond = np.mean([logpdf(condition(j, r[:1]), r[1]) for r in test])
    marg = np.mean(logpdf(marginal(j, "future"), test[:, 1]))
    assert cond > marg


def test_serialization_round_trip():
    rng = np.random.default_rng(0)
    g = random_gmm(rng, 3)
    j = random_joint(rng, 2, 3, 1)
    g2, j2 = mixture_from_dict(g.to_dict()), mixture_from_dict(j.to_dict())
    assert np.array_equal(g2.means, g.means) and np.array_equal(j2.covs, j.covs)
    assert j2.n_past == 1


def test_validation():
    with pytest.raises(ValueError):
        Gmm([1.0, 1.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        Gmm([1.0], [0.0], [-1.0])
    with pytest.raises(ValueError):
        fit_em(np.arange(4.0), K=3)
    with pytest.raises(ValueError):
        JointGmm([1.0], [[0.0, 0.0]], [[[1.0, 0.5], [0.0, 1.0]]], 1)
    with pytest.raises(TypeError):
        cdf(random_joint(np.random.default_rng(0), 1, 2, 1), 0.0)
