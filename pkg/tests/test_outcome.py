from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from oracles import batch_se, delta_enumeration, gaussian_posterior
from structmed.effects import nie_chain
from structmed.errors import ArgumentError, SamplerError
from structmed.grid_kernel import Grid2D, MaternParams, eigenbasis
from structmed.mediator import MediatorOptions, fit_mediator, project_dataset
from structmed.outcome import (OutcomeOptions, fit_basmu, fit_bima, fit_outcome, nu_design_factor, nu_design_scale,
                               read_outcome_chains, theta_beta_conditional, update_delta_seq, update_nu_svd,
                               update_theta_beta, write_outcome_chains)
from structmed.simulate import Dataset, basis_for, case_config, make_truth, simulate, simulate_dataset

FIXED = {"sigma_Y2": 0.6, "sigma_beta2": 1.5, "sigma_gamma2": 2.0, "sigma_zeta2": 1.0, "sigma_nu2": 0.7}


def _nu_draws(Y, G, delta, sY2, snu2, N, seed, factored):
    rng = np.random.default_rng(seed)
    factor = nu_design_factor(G) if factored else None
    return np.array([update_nu_svd(Y, G, delta, sY2, snu2, rng, factor) for _ in range(N)])


def _check_gaussian_draws(draws, mean, cov):
    N = draws.shape[0]
    se_mean = np.sqrt(np.diag(cov) / N)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se_mean)
    emp = np.cov(draws, rowvar=False)
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / N)
    assert np.all(np.abs(emp - cov) < 3 * se_cov)


def test_nu_update_scalar_formulas():
    G = np.array([[2.0]])
    draws = _nu_draws(np.array([4.0]), G, np.array([1]), 1.0, 1.0, 20000, 1, False)[:, 0]
    # V1 = 1 / (D^2 + 1) = 0.2, E1 = V1 * D * Y* = 1.6
    assert abs(draws.mean() - 1.6) < 3 * math.sqrt(0.2 / 20000)
    assert draws.var() == pytest.approx(0.2, rel=0.05)


def test_nu_update_vanishing_prior_variance(rng):
    G = rng.standard_normal((4, 6))
    nu = update_nu_svd(rng.standard_normal(4), G, np.ones(6), 1.0, 1e-14, rng)
    assert np.max(np.abs(nu)) < 1e-5


@pytest.mark.parametrize("factored", [False, True])
@pytest.mark.parametrize("shape", [(2, 3), (3, 2)], ids=["k>n", "k<=n"])
def test_nu_update_matches_dense_conjugate_oracle(shape, factored):
    n, k = shape
    rng = np.random.default_rng(100 + n)
    G = rng.standard_normal((n, k))
    Y = rng.standard_normal(n)
    sY2, snu2 = 0.5, 1.3
    mean, cov = gaussian_posterior(G, Y, sY2, np.full(k, snu2))
    draws = _nu_draws(Y, G, np.ones(k), sY2, snu2, 100_000, 7, factored)
    _check_gaussian_draws(draws, mean, cov)


def test_nu_update_rank_deficient_design_and_inactive_entries():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((4, 2)) @ rng.standard_normal((2, 5))  # rank 2, k=4 active <= n
    delta = np.array([1, 1, 0, 1, 1])
    Y = rng.standard_normal(4)
    sY2, snu2 = 0.8, 0.9
    act = delta == 1
    mean, cov = gaussian_posterior(G[:, act], Y, sY2, np.full(act.sum(), snu2))
    draws = _nu_draws(Y, G, delta, sY2, snu2, 60_000, 5, True)
    _check_gaussian_draws(draws[:, act], mean, cov)
    _check_gaussian_draws(draws[:, ~act], np.zeros(1), np.array([[snu2]]))


def test_nu_design_factor_reproduces_columns(rng):
    G = rng.standard_normal((5, 3)) @ rng.standard_normal((3, 9))
    Q, R = nu_design_factor(G)
    assert Q.shape == (5, 3)
    np.testing.assert_allclose(Q @ R, G, atol=1e-12)
    Q0, R0 = nu_design_factor(np.zeros((4, 3)))
    assert Q0.shape == (4, 0) and R0.shape == (0, 3)


def test_nu_design_scales():
    assert nu_design_scale("sqrt", 400) == pytest.approx(0.05)
    assert nu_design_scale("measure", 400) == pytest.approx(1 / 400)
    assert nu_design_scale("raw", 400) == 1.0
    with pytest.raises(ArgumentError):
        OutcomeOptions(nu_design="cubic")


def test_delta_log_odds_direct_evaluation():
    G = np.array([[1.0]])
    nu = np.array([math.sqrt(2.0)])
    Y = np.array([math.sqrt(2.0)])
    # active: ||R1||^2 = 0, ||R0||^2 = 2 sigma^2 -> log-odds 1
    _, _, probs = update_delta_seq(Y - G @ nu, G, nu, np.array([1]), 1.0, np.random.default_rng(0))
    assert probs[0] == pytest.approx(math.e / (1 + math.e), rel=1e-14)
    _, _, probs = update_delta_seq(Y, G, nu, np.array([0]), 1.0, np.random.default_rng(0))
    assert probs[0] == pytest.approx(math.e / (1 + math.e), rel=1e-14)


def test_delta_no_effect_voxel_is_prior(rng):
    G = rng.standard_normal((5, 3))
    nu = np.array([0.0, 1.0, 0.0])
    R = rng.standard_normal(5)
    _, _, probs = update_delta_seq(R, G, nu, np.zeros(3), 0.7, rng)
    assert probs[0] == 0.5 and probs[2] == 0.5
    _, _, probs = update_delta_seq(R, np.zeros((5, 3)), nu, np.zeros(3), 0.7, rng, p_delta=0.3)
    np.testing.assert_allclose(probs, 0.3)


def test_delta_residual_is_carried(rng):
    G = rng.standard_normal((6, 4))
    nu = rng.standard_normal(4)
    Y = rng.standard_normal(6)
    delta = np.array([1, 0, 1, 0])
    d2, R2, _ = update_delta_seq(Y - G @ (nu * delta), G, nu, delta, 0.5, rng)
    np.testing.assert_allclose(R2, Y - G @ (nu * d2), atol=1e-12)


def test_delta_sweep_stationary_distribution_matches_enumeration():
    rng = np.random.default_rng(8)
    G = np.array([[1.0, 0.6], [0.3, -0.8], [0.5, 0.4]])
    nu = np.array([0.9, -0.7])
    Y = np.array([0.8, 0.9, 0.1])
    sY2 = 0.5
    states, probs = delta_enumeration(Y, G, nu, sY2, 0.5)
    delta = np.zeros(2, dtype=np.int8)
    R = Y.copy()
    N = 100_000
    Gt = np.ascontiguousarray(G.T)
    gg = np.sum(G * G, axis=0)
    idx = np.empty(N, dtype=int)
    for t in range(N):
        delta, R, _ = update_delta_seq(R, G, nu, delta, sY2, rng, 0.5, Gt, gg)
        idx[t] = 2 * delta[0] + delta[1]
    onehot = (idx[:, None] == np.arange(4)[None]).astype(float)
    se = batch_se(onehot, 100)
    assert np.all(np.abs(onehot.mean(axis=0) - probs) < 3 * se), (onehot.mean(axis=0), probs, se)


def test_delta_non_finite_raises_with_voxel(rng):
    G = rng.standard_normal((3, 3))
    with pytest.raises(SamplerError, match="voxel 1"):
        update_delta_seq(np.zeros(3), G, np.array([0.0, np.inf, 0.0]), np.zeros(3), 1.0, rng)


def test_theta_beta_scalar_ridge():
    r, sY2, sb2 = 1.7, 0.4, 2.0
    mean, _ = theta_beta_conditional(np.array([[1.0]]), np.array([r]), np.array([1.0]), sY2, sb2)
    assert mean[0] == pytest.approx(r / (sY2 / sb2 + 1.0), rel=1e-14)
    mean, _ = theta_beta_conditional(np.array([[1.0]]), np.array([r]), np.array([1.0]), sY2, 1e-14)
    assert abs(mean[0]) < 1e-12


def test_theta_beta_draws_match_ridge_oracle(rng):
    Mt = rng.standard_normal((7, 3))
    lam = np.array([0.5, 0.2, 0.05])
    r = rng.standard_normal(7)
    sY2, sb2 = 0.3, 1.2
    mean_o, cov_o = gaussian_posterior(Mt, r, sY2, sb2 * lam)
    mean, chol = theta_beta_conditional(Mt, r, lam, sY2, sb2)
    np.testing.assert_allclose(mean, mean_o, rtol=1e-10)
    np.testing.assert_allclose(np.linalg.inv(chol @ chol.T), cov_o, rtol=1e-10)
    draws = np.array([update_theta_beta(Mt, r, lam, sY2, sb2, rng) for _ in range(40_000)])
    _check_gaussian_draws(draws, mean_o, cov_o)


@pytest.fixture(scope="module")
def tiny_outcome():
    basis = eigenbasis(Grid2D(1, 2), MaternParams(0.5, 1.0), 2)
    rng = np.random.default_rng(4)
    n = 3
    X = np.array([1.0, 0.0, 1.0])
    C = rng.standard_normal((n, 1))
    M = rng.standard_normal((n, 2))
    etahat = rng.standard_normal((n, 2))
    Y = rng.standard_normal(n) + X
    return Dataset(M, X, C, Y), basis, etahat


def _joint_oracle(data, basis, G=None):
    Mt = project_dataset(data, basis).Mt
    cols = [Mt, data.X[:, None], data.C]
    prior = [FIXED["sigma_beta2"] * basis.eigenvalues, [FIXED["sigma_gamma2"]], [FIXED["sigma_zeta2"]] * data.q]
    if G is not None:
        cols.append(G)
        prior.append([FIXED["sigma_nu2"]] * G.shape[1])
    mean, _ = gaussian_posterior(np.column_stack(cols), data.Y, FIXED["sigma_Y2"], np.concatenate(prior))
    return mean


@pytest.mark.parametrize("beta_update", ["gibbs", "mala"])
def test_bima_theta_beta_long_run_mean(tiny_outcome, beta_update):
    data, basis, _ = tiny_outcome
    oracle = _joint_oracle(data, basis)
    ch = fit_bima(data, basis, OutcomeOptions(n_iter=60_000, keep_fraction=0.9, fixed=FIXED,
                                              beta_update=beta_update), 17)
    z = (ch.theta_beta.mean(axis=0) - oracle[: basis.L]) / batch_se(ch.theta_beta)
    assert np.all(np.abs(z) < 3), z
    zg = (ch.gamma.mean() - oracle[basis.L]) / batch_se(ch.gamma)
    assert abs(zg) < 3


@pytest.mark.parametrize("nu_svd", ["factored", "direct"])
def test_basmu_nu_long_run_mean(tiny_outcome, nu_svd):
    data, basis, etahat = tiny_outcome
    G = etahat * nu_design_scale("sqrt", basis.p)
    oracle = _joint_oracle(data, basis, G)
    opts = OutcomeOptions(n_iter=60_000, keep_fraction=0.9, fixed=FIXED, fixed_delta=np.ones(2), nu_svd=nu_svd)
    ch = fit_basmu(data, basis, etahat, opts, 23)
    z = (ch.nu.mean(axis=0) - oracle[-2:]) / batch_se(ch.nu)
    assert np.all(np.abs(z) < 3), z
    z = (ch.theta_beta.mean(axis=0) - oracle[: basis.L]) / batch_se(ch.theta_beta)
    assert np.all(np.abs(z) < 3), z


def test_basmu_with_zero_etahat_reduces_to_bima(tiny_outcome):
    data, basis, _ = tiny_outcome
    opts = OutcomeOptions(n_iter=40_000, keep_fraction=0.9, fixed=FIXED)
    a = fit_basmu(data, basis, np.zeros((data.n, basis.p)), opts, 3)
    b = fit_bima(data, basis, opts, 4)
    se = np.sqrt(batch_se(a.theta_beta) ** 2 + batch_se(b.theta_beta) ** 2)
    assert np.all(np.abs(a.theta_beta.mean(axis=0) - b.theta_beta.mean(axis=0)) < 3 * se)
    assert a.theta_beta.var(axis=0) == pytest.approx(b.theta_beta.var(axis=0), rel=0.1)
    # selection indicators follow their prior
    assert a.delta.mean() == pytest.approx(0.5, abs=0.02)


def test_null_model_effects_near_zero():
    cfg = case_config(3, n=120, n1=6, n2=6, L=8, gamma=0.0, zeta=(0.0, 0.0), seed=5)
    basis = basis_for(cfg)
    rng = np.random.default_rng(cfg.seed)
    truth = dataclasses.replace(make_truth(cfg, basis, rng), beta=np.zeros(cfg.p))
    data = simulate_dataset(truth, cfg, rng)
    med = fit_mediator(data, basis, MediatorOptions(n_iter=400), 1)
    out = fit_bima(data, basis, OutcomeOptions(n_iter=3000), 2)
    assert abs(out.gamma.mean()) < 3 * out.gamma.std()
    nie = nie_chain(med, out, basis).scalar
    assert abs(nie.mean()) < 3 * nie.std()


def test_outcome_chain_io_and_determinism(tmp_path):
    cfg = case_config(2, n=30, n1=5, n2=5, L=6, seed=1)
    data, truth, basis = simulate(cfg)
    opts = OutcomeOptions(n_iter=300)
    a = fit_basmu(data, basis, truth.eta, opts, 9)
    b = fit_basmu(data, basis, truth.eta, opts, 9)
    assert np.array_equal(a.nu, b.nu) and np.array_equal(a.delta, b.delta)
    write_outcome_chains(a, tmp_path / "o")
    back = read_outcome_chains(tmp_path / "o")
    for name in ("theta_beta", "gamma", "zeta", "sigma_Y2", "nu", "delta", "sigma_nu2"):
        assert np.array_equal(getattr(back, name), getattr(a, name)), name
    assert back.model == "basmu" and back.nu_design == "sqrt"
    c = fit_outcome("bima", data, basis, None, opts, 9)
    write_outcome_chains(c, tmp_path / "b")
    back = read_outcome_chains(tmp_path / "b")
    assert back.nu is None and np.array_equal(back.theta_beta, c.theta_beta)


def test_nu_effect_scale(tiny_outcome):
    data, basis, etahat = tiny_outcome
    ch = fit_basmu(data, basis, etahat, OutcomeOptions(n_iter=50), 0)
    G = etahat * nu_design_scale("sqrt", basis.p)
    np.testing.assert_allclose(etahat @ ch.nu_effect()[-1] / basis.p, G @ (ch.nu[-1] * ch.delta[-1]), atol=1e-12)


def test_outcome_argument_errors(tiny_outcome):
    data, basis, etahat = tiny_outcome
    with pytest.raises(ArgumentError):
        fit_basmu(data, basis, etahat[:, :1])
    with pytest.raises(ArgumentError):
        fit_outcome("basmu", data, basis)
    with pytest.raises(ArgumentError):
        fit_outcome("other", data, basis)
    with pytest.raises(ArgumentError):
        OutcomeOptions(p_delta=1.0)
    with pytest.raises(ArgumentError):
        update_delta_seq(np.zeros(3), etahat, np.zeros(2), np.zeros(2), 1.0, np.random.default_rng(0), p_delta=0.0)
