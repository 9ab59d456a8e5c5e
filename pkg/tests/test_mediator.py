from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from oracles import batch_se, central_difference_grad, gaussian_posterior, mediator_joint_design
from structmed.errors import ArgumentError, FitError
from structmed.grid_kernel import Grid2D, MaternParams, eigenbasis, from_coeffs
from structmed.mediator import (MediatorChains, MediatorOptions, MediatorState, fit_mediator, grad_log_post_alpha,
                                log_post_alpha, mala_step_alpha, posterior_mean_eta, project_dataset, read_etahat,
                                read_mediator_chains, write_etahat, write_mediator_chains)
from structmed.simulate import Dataset, case_config, simulate

FIXED = {"sigma_M2": 1.5, "sigma_alpha2": 2.0, "sigma_xi2": 1.0, "sigma_eta2": 0.8}


@pytest.fixture(scope="module")
def tiny():
    basis = eigenbasis(Grid2D(2, 2), MaternParams(0.5, 1.0), 2)
    rng = np.random.default_rng(5)
    n = 3
    X = np.array([1.0, 0.0, 1.0])
    C = rng.standard_normal((n, 1))
    M = rng.standard_normal((n, 4)) + np.outer(X, [1.0, 0.5, -0.5, 0.2])
    return Dataset(M, X, C, np.zeros(n)), basis


def _tiny_oracle(data, basis):
    proj = project_dataset(data, basis)
    A, y = mediator_joint_design(proj.Mt, proj.X, proj.C)
    lam = basis.eigenvalues
    L, q, n = basis.L, data.q, data.n
    prior = np.concatenate([FIXED["sigma_alpha2"] * lam, np.tile(FIXED["sigma_xi2"] * lam, q),
                            np.tile(FIXED["sigma_eta2"] * lam, n)])
    mean, _ = gaussian_posterior(A, y, FIXED["sigma_M2"] / basis.p, prior)
    return mean[:L], mean[(1 + q) * L:].reshape(n, L)


@pytest.mark.parametrize("alpha_update", ["gibbs", "mala"])
def test_eta_gibbs_matches_conjugate_oracle(tiny, alpha_update):
    data, basis = tiny
    _, eta_mean = _tiny_oracle(data, basis)
    opts = MediatorOptions(n_iter=40000, keep_fraction=0.9, alpha_update=alpha_update, fixed=FIXED)
    ch = fit_mediator(data, basis, opts, 2024)
    draws = ch.theta_eta.reshape(ch.n_draws, -1)
    se = batch_se(draws)
    z = (draws.mean(axis=0) - eta_mean.ravel()) / se
    assert np.all(np.abs(z) < 3.0), z


def test_alpha_gibbs_matches_conjugate_oracle(tiny):
    data, basis = tiny
    alpha_mean, _ = _tiny_oracle(data, basis)
    ch = fit_mediator(data, basis, MediatorOptions(n_iter=40000, keep_fraction=0.9, alpha_update="mala",
                                                   fixed=FIXED), 77)
    z = (ch.theta_alpha.mean(axis=0) - alpha_mean) / batch_se(ch.theta_alpha)
    assert np.all(np.abs(z) < 3.0), z


def _state_and_proj(seed, n=20, L=6):
    basis = eigenbasis(Grid2D(4, 4), MaternParams(0.2, 2.0), L)
    rng = np.random.default_rng(seed)
    X = rng.binomial(1, 0.5, n).astype(float)
    C = rng.standard_normal((n, 2))
    M = rng.standard_normal((n, 16)) + np.outer(X, np.linspace(-1, 1, 16))
    proj = project_dataset(Dataset(M, X, C, np.zeros(n)), basis)
    st = MediatorState(rng.standard_normal(L), 0.1 * rng.standard_normal((2, L)), 0.1 * rng.standard_normal((n, L)),
                       sigma_M2=1.3, sigma_alpha2=0.7)
    return st, proj, basis, rng


@pytest.mark.parametrize("seed", range(5))
def test_alpha_gradient_matches_finite_differences(seed):
    st, proj, basis, rng = _state_and_proj(seed)
    theta = rng.standard_normal(basis.L)
    g = grad_log_post_alpha(theta, st, proj)
    fd = central_difference_grad(lambda t: log_post_alpha(t, st, proj), theta, 1e-5)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-4


def test_alpha_gradient_sign_symmetry():
    st, proj, basis, rng = _state_and_proj(11)
    theta = rng.standard_normal(basis.L)
    flipped = dataclasses.replace(proj, X=-proj.X)
    np.testing.assert_allclose(grad_log_post_alpha(-theta, st, flipped), -grad_log_post_alpha(theta, st, proj),
                               rtol=1e-12, atol=1e-10)


def test_mala_accepts_at_mode_with_tiny_step():
    st, proj, basis, rng = _state_and_proj(3)
    w = proj.p / st.sigma_M2
    R = proj.Mt - proj.C @ st.theta_xi - st.theta_eta
    prec = w * (proj.X @ proj.X) + 1.0 / (st.sigma_alpha2 * proj.eigenvalues)
    mode = w * (proj.X @ R) / prec
    assert np.allclose(grad_log_post_alpha(mode, st, proj), 0.0, atol=1e-8)
    st = dataclasses.replace(st, theta_alpha=mode)
    accepted = 0
    for _ in range(200):
        new, acc = mala_step_alpha(st, proj, basis, 1e-7, rng)
        accepted += acc
    assert accepted == 200
    with pytest.raises(ArgumentError):
        mala_step_alpha(st, proj, basis, 0.0, rng)


def test_no_exposure_information_leaves_alpha_at_prior():
    cfg = case_config(3, n=60, n1=6, n2=6, L=8, seed=4)
    data, _, basis = simulate(cfg)
    data = Dataset(data.M, np.zeros(data.n), data.C, data.Y)
    ch = fit_mediator(data, basis, MediatorOptions(n_iter=6000, keep_fraction=0.5, alpha_update="gibbs",
                                                   fixed={"sigma_alpha2": 1.0}), 9)
    std = ch.theta_alpha / np.sqrt(basis.eigenvalues)
    assert abs(std.mean()) < 0.1
    assert np.mean(std**2) == pytest.approx(1.0, abs=0.15)


def test_sigma_M_recovered_at_simulation_scale():
    cfg = case_config(1, "full", seed=21)
    data, _, basis = simulate(cfg)
    ch = fit_mediator(data, basis, MediatorOptions(n_iter=500), 1)
    assert ch.sigma_M2.mean() == pytest.approx(4.0, rel=0.1)
    assert 0.3 < ch.acceptance < 0.8


def test_posterior_mean_eta_edge_cases(small_basis):
    L, n = small_basis.L, 3
    c = np.random.default_rng(0).standard_normal((n, L))

    def chains(eta):
        T = eta.shape[0]
        z = np.zeros(T)
        return MediatorChains(np.zeros((T, L)), np.zeros((T, 0, L)), eta, z, z, z, z, T, 0)

    np.testing.assert_allclose(posterior_mean_eta(chains(c[None]), small_basis), from_coeffs(c, small_basis))
    assert np.all(posterior_mean_eta(chains(np.zeros((4, n, L))), small_basis) == 0.0)
    np.testing.assert_allclose(posterior_mean_eta(chains(np.stack([c, -c])), small_basis), 0.0, atol=1e-15)


def test_fit_rejects_degenerate_designs(small_basis):
    M = np.zeros((1, small_basis.p))
    with pytest.raises(FitError):
        fit_mediator(Dataset(M, np.zeros(1), np.zeros((1, 0)), np.zeros(1)), small_basis)
    M = np.zeros((4, small_basis.p))
    with pytest.raises(FitError):
        fit_mediator(Dataset(M, np.ones(4), np.zeros((4, 0)), np.zeros(4)), small_basis)
    with pytest.raises(ArgumentError):
        fit_mediator(Dataset(np.zeros((4, 3)), np.arange(4.0), np.zeros((4, 0)), np.zeros(4)), small_basis)
    with pytest.raises(ArgumentError):
        MediatorOptions(fixed={"sigma_Q2": 1.0})


def test_seeded_fit_is_deterministic_and_round_trips(tmp_path):
    cfg = case_config(2, n=25, n1=5, n2=5, L=6, seed=2)
    data, _, basis = simulate(cfg)
    a = fit_mediator(data, basis, MediatorOptions(n_iter=200), 31)
    b = fit_mediator(data, basis, MediatorOptions(n_iter=200), 31)
    assert np.array_equal(a.theta_eta, b.theta_eta) and np.array_equal(a.sigma_M2, b.sigma_M2)
    write_mediator_chains(a, tmp_path / "med")
    back = read_mediator_chains(tmp_path / "med")
    for name in ("theta_alpha", "theta_xi", "theta_eta", "sigma_M2", "sigma_eta2"):
        assert np.array_equal(getattr(back, name), getattr(a, name)), name
    assert back.acceptance == a.acceptance and back.n_iter == a.n_iter and back.burn_in == a.burn_in
    eh = posterior_mean_eta(a, basis)
    write_etahat(eh, tmp_path / "etahat.csv")
    assert np.array_equal(read_etahat(tmp_path / "etahat.csv"), eh)
