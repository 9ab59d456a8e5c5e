from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthetic import LinearDesign
from structmed.bias import (BiasInputs, bias_limit_basmu, bias_limit_bima, empirical_bias_by_n, empirical_H_h,
                            freq_bias_limit, identifiability_check, ols_nie_fwl, ridge_theta_beta, shrinkage_factor)
from structmed.errors import ArgumentError, PreconditionError
from structmed.grid_kernel import to_coeffs
from structmed.mediator import MediatorOptions, fit_mediator, posterior_mean_eta
from structmed.outcome import OutcomeOptions, fit_basmu
from structmed.simulate import Truth, basis_for, case_config, simulate


def _truth(n, p, eta, nu, alpha=None, xi=None):
    return Truth(alpha=np.zeros(p) if alpha is None else alpha, beta=np.zeros(p), nu=nu, eta=eta,
                 xi=np.zeros((1, p)) if xi is None else xi, gamma=0.0, zeta=np.zeros(1), sigma_M=1.0, sigma_Y=1.0,
                 sigma_eta=1.0)


def test_zero_E_gives_zero_moments(small_basis):
    n, p = 6, small_basis.p
    t = _truth(n, p, np.zeros((n, p)), np.ones(p))
    inp = empirical_H_h(t, np.zeros(n), np.zeros((n, 1)), small_basis)
    assert np.all(inp.H == 0) and np.all(inp.h0 == 0)


def test_zero_nu_gives_zero_h0(small_basis, rng):
    n, p = 8, small_basis.p
    t = _truth(n, p, rng.standard_normal((n, p)), np.zeros(p))
    inp = empirical_H_h(t, rng.binomial(1, 0.5, n), rng.standard_normal((n, 1)), small_basis)
    assert np.all(inp.h0 == 0)
    assert np.all(bias_limit_bima(inp) == 0)


def test_hand_instance_moments():
    from structmed.grid_kernel import KernelBasis
    basis = KernelBasis(np.array([0.6, 0.4]), np.sqrt(2) * np.eye(2))
    eta = np.array([[1.0, 2.0], [3.0, -1.0]])
    nu = np.array([0.5, 1.0])
    t = _truth(2, 2, eta, nu, xi=np.zeros((1, 2)))
    inp = empirical_H_h(t, np.zeros(2), np.zeros((2, 1)), basis)
    th = eta / np.sqrt(2)  # coefficients: f psi / p
    U = eta @ nu / 2
    H = np.array([[(th[0, 0] ** 2 + th[1, 0] ** 2) / 2, (th[0, 0] * th[0, 1] + th[1, 0] * th[1, 1]) / 2],
                  [0, (th[0, 1] ** 2 + th[1, 1] ** 2) / 2]])
    H[1, 0] = H[0, 1]
    np.testing.assert_allclose(inp.H, H, rtol=1e-14)
    np.testing.assert_allclose(inp.h0, [(th[0, 0] * U[0] + th[1, 0] * U[1]) / 2,
                                        (th[0, 1] * U[0] + th[1, 1] * U[1]) / 2], rtol=1e-14)
    assert inp.sigma2_M == pytest.approx(0.5)


def test_limit_identities(rng):
    v = rng.standard_normal(4)
    inp = BiasInputs(np.zeros((4, 4)), v, None, 1.0)
    np.testing.assert_allclose(bias_limit_bima(inp), v)
    assert np.all(bias_limit_bima(BiasInputs(np.eye(4), np.zeros(4), None, 1.0)) == 0)
    A = rng.standard_normal((4, 4))
    H = A @ A.T
    same = BiasInputs(H, v, v.copy(), 0.3)
    assert np.all(bias_limit_basmu(same) == 0)
    none = BiasInputs(H, v, np.zeros(4), 0.3)
    np.testing.assert_allclose(bias_limit_basmu(none), bias_limit_bima(none))


def test_bias_inputs_validation():
    with pytest.raises(ArgumentError):
        BiasInputs(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2), None, 1.0)
    with pytest.raises(ArgumentError):
        BiasInputs(-np.eye(2), np.zeros(2), None, 1.0)
    with pytest.raises(ArgumentError):
        BiasInputs(np.eye(2), np.zeros(3), None, 1.0)
    with pytest.raises(ArgumentError):
        BiasInputs(np.eye(2), np.zeros(2), None, 0.0)


def test_freq_limit_cases():
    a = np.array([1.0, 2.0, -1.0])
    v = np.array([0.5, 0.5, 1.0])
    assert freq_bias_limit(a, np.zeros(3), np.eye(3), 1.0) == 0.0
    for se, sm in [(1.0, 1.0), (0.5, 2.0), (1.3, 0.4)]:
        got = freq_bias_limit(a, v, se**2 * np.eye(3), sm**2)
        assert got == pytest.approx(shrinkage_factor(se, sm) * a @ v, rel=1e-12)
    assert shrinkage_factor(1.0, 1.0) == 0.5


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_freq_limit_bounded_by_unshrunk(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 5))
    T = A @ A.T
    a = rng.standard_normal(5)
    v = rng.standard_normal(5)
    s2 = rng.uniform(0.1, 3.0)
    # (T + s2 I)^-1 T has eigenvalues in [0, 1), so the bias vector is a contraction of v
    w = np.linalg.solve(T + s2 * np.eye(5), T @ v)
    assert np.linalg.norm(w) <= np.linalg.norm(v) + 1e-12
    assert freq_bias_limit(a, v, T, s2) == pytest.approx(a @ w, rel=1e-9, abs=1e-12)


def test_ols_oracle_matches_limit_random_psd():
    rng = np.random.default_rng(10)
    L = 10
    A = rng.standard_normal((L, L)) / np.sqrt(L)
    design = LinearDesign(theta_alpha=rng.standard_normal(L) * 0.5, theta_beta=rng.standard_normal(L) * 0.3,
                          theta_nu=rng.standard_normal(L) * 0.5, Theta=A @ A.T + 0.1 * np.eye(L), s2=0.8)
    truth_nie = design.theta_alpha @ design.theta_beta
    est = [ols_nie_fwl(*design.draw(5000, rng))[0] for _ in range(40)]
    mc_bias = np.mean(est) - truth_nie
    limit = freq_bias_limit(design.theta_alpha, design.theta_nu, design.Theta, design.s2)
    assert mc_bias == pytest.approx(limit, rel=0.05)


def test_ridge_matches_conjugate_mean_with_flat_nuisance(rng):
    n, L = 40, 3
    Mt = rng.standard_normal((n, L))
    X = rng.binomial(1, 0.5, n).astype(float)
    C = rng.standard_normal((n, 1))
    Y = rng.standard_normal(n)
    lam = np.array([0.5, 0.3, 0.1])
    # flat prior on (gamma, zeta) as a limit of very diffuse Gaussian priors
    A = np.column_stack([Mt, X, C])
    prec = A.T @ A / 0.4 + np.diag(np.concatenate([1 / (2.0 * lam), [1e-12, 1e-12]]))
    full = np.linalg.solve(prec, A.T @ Y / 0.4)
    np.testing.assert_allclose(ridge_theta_beta(Mt, X, C, Y, lam, 0.4, 2.0), full[:L], rtol=1e-6)


def test_empirical_bias_shrinks_with_n_null_confounding():
    cfg = case_config(3, n1=6, n2=6, L=8)
    basis = basis_for(cfg)
    res = empirical_bias_by_n(cfg, basis, [100, 800], reps=30, seed=1)
    assert res[800]["norm"] < res[100]["norm"]


def test_basmu_limit_smaller_in_confounded_case():
    cfg = case_config(2, seed=3)
    data, truth, basis = simulate(cfg)
    med = fit_mediator(data, basis, MediatorOptions(n_iter=400), 1)
    etahat = posterior_mean_eta(med, basis)
    out = fit_basmu(data, basis, etahat, OutcomeOptions(n_iter=2000), 2)
    nu_hat = out.nu_effect().mean(axis=0)
    inp = empirical_H_h(truth, data.X, data.C, basis, etahat, nu_hat, partial_out=True)
    assert np.linalg.norm(bias_limit_basmu(inp)) < np.linalg.norm(bias_limit_bima(inp))


def test_identifiability_flags(rng):
    n, L = 50, 4
    X = rng.binomial(1, 0.5, n).astype(float)
    C = rng.standard_normal((n, 2))
    eta = rng.standard_normal((n, L))
    rep = identifiability_check(X, C, eta)
    assert not rep.rank_deficient and rep.rank == 1 + 2 + L
    eta[:, 1] = 2 * X
    assert identifiability_check(X, C, eta).rank_deficient
    with pytest.raises(PreconditionError):
        identifiability_check(X[:6], C[:6], eta[:6])
    sparse = identifiability_check(X, C, rng.standard_normal((n, 30)), support=[0, 3, 7])
    assert sparse.design == "sparse" and sparse.n_columns == 6


def test_identifiability_on_simulated_case():
    data, truth, basis = simulate(case_config(1, seed=0))
    rep = identifiability_check(data.X, data.C, truth.eta, basis)
    assert not rep.rank_deficient
    assert np.isfinite(rep.condition_number) and rep.to_dict()["condition_number"] == rep.condition_number
