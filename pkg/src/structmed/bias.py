"""Asymptotic bias limits for omitted confounders and their Monte Carlo checks.

All quantities live in basis coordinates. The noise variance entering the
limits is the per-coefficient variance of the projected mediator, which is
``sigma_M^2 / p`` for voxel-level noise of variance ``sigma_M^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, PreconditionError
from .grid_kernel import KernelBasis, to_coeffs
from .simulate import CaseConfig, Truth, draw_covariates, make_truth, simulate_dataset

__all__ = [
    "BiasInputs",
    "empirical_H_h",
    "bias_limit_bima",
    "bias_limit_basmu",
    "freq_bias_limit",
    "shrinkage_factor",
    "ols_nie_fwl",
    "ridge_theta_beta",
    "empirical_bias_by_n",
    "IdentifiabilityReport",
    "identifiability_check",
]


def _psd_check(name: str, A: np.ndarray, tol: float = 1e-8) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"{name} must be square, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ArgumentError(f"{name} contains non-finite values")
    scale = max(1.0, float(np.abs(A).max()))
    if not np.allclose(A, A.T, atol=tol * scale, rtol=0):
        raise ArgumentError(f"{name} must be symmetric")
    if A.size and np.linalg.eigvalsh(0.5 * (A + A.T))[0] < -tol * scale:
        raise ArgumentError(f"{name} must be positive semidefinite")


@dataclass
class BiasInputs:
    """Moment inputs of the bias limits.

    ``H`` and ``h0`` are the second moments of the mediator-mean coefficients
    and their cross moments with the true confounder term; ``h_hat`` is the
    analogue built from an estimated confounder term. ``sigma2_M`` is the
    per-coefficient noise variance.
    """

    H: np.ndarray
    h0: np.ndarray
    h_hat: np.ndarray | None
    sigma2_M: float
    theta_L: np.ndarray | None = None
    theta_alpha: np.ndarray | None = None
    theta_nu: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, float))
        self.h0 = np.asarray(self.h0, float).ravel()
        _psd_check("H", self.H)
        L = self.H.shape[0]
        if self.h0.shape != (L,):
            raise ArgumentError(f"h0 has shape {self.h0.shape}, expected ({L},)")
        if self.h_hat is not None:
            self.h_hat = np.asarray(self.h_hat, float).ravel()
            if self.h_hat.shape != (L,):
                raise ArgumentError(f"h_hat has shape {self.h_hat.shape}, expected ({L},)")
        if not (np.isfinite(self.sigma2_M) and self.sigma2_M > 0):
            raise ArgumentError("sigma2_M must be positive")
        if self.theta_L is not None:
            self.theta_L = np.atleast_2d(np.asarray(self.theta_L, float))
            _psd_check("theta_L", self.theta_L)

    @property
    def L(self) -> int:
        return self.H.shape[0]


def _residualize(A: np.ndarray, W: np.ndarray | None) -> np.ndarray:
    if W is None or W.shape[1] == 0:
        return A
    coef, *_ = np.linalg.lstsq(W, A, rcond=None)
    return A - W @ coef


def empirical_H_h(truth: Truth, X: np.ndarray, C: np.ndarray, basis: KernelBasis, etahat: np.ndarray | None = None,
                  nu_hat: np.ndarray | None = None, partial_out: bool = False) -> BiasInputs:
    """Finite-n moment inputs from the generative truth.

    ``E_i = alpha X_i + xi' C_i + eta_i`` and ``U_i = sum_j nu_j eta_ij / p``.
    With ``partial_out=True`` the coefficients of ``E`` and both confounder
    terms are first residualized on ``[X, C]``, matching an outcome model
    that also adjusts for the exposure and covariates.
    """
    n, p = truth.eta.shape
    X = np.asarray(X, float).ravel()
    C = np.asarray(C, float).reshape(n, -1)
    if X.shape != (n,) or basis.p != p:
        raise ArgumentError("truth, covariates and basis disagree on n or p")
    E = np.outer(X, truth.alpha) + C @ truth.xi + truth.eta
    thE = to_coeffs(E, basis)
    U0 = truth.confounder_term()
    Uhat = None
    if etahat is not None or nu_hat is not None:
        if etahat is None or nu_hat is None:
            raise ArgumentError("etahat and nu_hat must be supplied together")
        etahat = np.asarray(etahat, float)
        if etahat.shape != (n, p) or np.shape(nu_hat) != (p,):
            raise ArgumentError("etahat must be (n, p) and nu_hat (p,)")
        Uhat = etahat @ np.asarray(nu_hat, float) / p
    if partial_out:
        W = np.column_stack([X, C])
        thE = _residualize(thE, W)
        U0 = _residualize(U0[:, None], W).ravel()
        if Uhat is not None:
            Uhat = _residualize(Uhat[:, None], W).ravel()
    H = thE.T @ thE / n
    h0 = thE.T @ U0 / n
    h_hat = None if Uhat is None else thE.T @ Uhat / n
    theta_eta = to_coeffs(truth.eta, basis)
    return BiasInputs(
        H=0.5 * (H + H.T),
        h0=h0,
        h_hat=h_hat,
        sigma2_M=truth.sigma_M**2 / p,
        theta_L=theta_eta.T @ theta_eta / n,
        theta_alpha=to_coeffs(truth.alpha, basis),
        theta_nu=to_coeffs(truth.nu, basis),
        source="truth" if Uhat is None else "truth+estimate",
    )


def _solve_shifted(H: np.ndarray, sigma2: float, v: np.ndarray) -> np.ndarray:
    A = H + sigma2 * np.eye(H.shape[0])
    return np.linalg.solve(A, v)


def bias_limit_bima(inputs: BiasInputs) -> np.ndarray:
    """``(H + sigma2 I)^-1 h0``; exactly zero when ``h0`` is zero."""
    if not np.any(inputs.h0):
        return np.zeros(inputs.L)
    return _solve_shifted(inputs.H, inputs.sigma2_M, inputs.h0)


def bias_limit_basmu(inputs: BiasInputs) -> np.ndarray:
    """``(H + sigma2 I)^-1 (h0 - h_hat)``; ``h_hat`` missing counts as zero."""
    h_hat = np.zeros(inputs.L) if inputs.h_hat is None else inputs.h_hat
    d = inputs.h0 - h_hat
    if not np.any(d):
        return np.zeros(inputs.L)
    return _solve_shifted(inputs.H, inputs.sigma2_M, d)


def freq_bias_limit(theta_alpha, theta_nu, theta_L, sigma2_M: float) -> float:
    """Limit of the least-squares NIE bias: ``a' (Theta + s I)^-1 Theta v``."""
    a = np.asarray(theta_alpha, float).ravel()
    v = np.asarray(theta_nu, float).ravel()
    T = np.atleast_2d(np.asarray(theta_L, float))
    _psd_check("theta_L", T)
    if a.shape != v.shape or T.shape != (a.size, a.size):
        raise ArgumentError("theta_alpha, theta_nu and theta_L dimensions disagree")
    if not sigma2_M > 0:
        raise ArgumentError("sigma2_M must be positive")
    if not np.any(v):
        return 0.0
    return float(a @ _solve_shifted(T, sigma2_M, T @ v))


def shrinkage_factor(sigma_eta: float, sigma_M: float) -> float:
    """``s_eta^2 / (s_eta^2 + s_M^2)``: the limit factor for iid coefficients."""
    if not (sigma_eta > 0 and sigma_M > 0):
        raise ArgumentError("scales must be positive")
    return sigma_eta**2 / (sigma_eta**2 + sigma_M**2)


def ols_nie_fwl(Mt: np.ndarray, X: np.ndarray, C: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares NIE that omits the confounder term.

    ``theta_alpha`` is the coefficient of ``X`` in the regression of each
    mediator coefficient on ``[X, C]``; ``theta_beta`` comes from regressing
    ``Y`` on ``Mt`` after projecting ``[X, C]`` out of both sides.
    Returns ``(nie, theta_alpha, theta_beta)``.
    """
    n = len(Y)
    W = np.column_stack([np.asarray(X, float), np.asarray(C, float).reshape(n, -1)])
    coef_m, *_ = np.linalg.lstsq(W, Mt, rcond=None)
    theta_alpha = coef_m[0]
    Mt_perp = Mt - W @ coef_m
    Y_perp = _residualize(np.asarray(Y, float)[:, None], W).ravel()
    theta_beta, *_ = np.linalg.lstsq(Mt_perp, Y_perp, rcond=None)
    return float(theta_alpha @ theta_beta), theta_alpha, theta_beta


def ridge_theta_beta(Mt: np.ndarray, X: np.ndarray, C: np.ndarray, Y: np.ndarray, eigenvalues: np.ndarray,
                     sigma_Y2: float, sigma_beta2: float) -> np.ndarray:
    """Posterior mean of ``theta_beta`` with fixed variances and flat priors on ``(gamma, zeta)``.

    Equivalent to the conjugate mean after integrating out the exposure and
    covariate coefficients: a ridge regression on the ``[X, C]``-residualized
    mediator coefficients.
    """
    n = len(Y)
    W = np.column_stack([np.asarray(X, float), np.asarray(C, float).reshape(n, -1)])
    Mp = _residualize(Mt, W)
    Yp = _residualize(np.asarray(Y, float)[:, None], W).ravel()
    prec = Mp.T @ Mp / sigma_Y2 + np.diag(1.0 / (sigma_beta2 * eigenvalues))
    return np.linalg.solve(prec, Mp.T @ Yp / sigma_Y2)


def empirical_bias_by_n(cfg: CaseConfig, basis: KernelBasis, ns, reps: int = 50, sigma_beta2: float = 1.0,
                        seed: int = 0) -> dict:
    """Monte Carlo bias of the ridge posterior mean of ``theta_beta`` at each ``n``.

    Each replication draws fresh individual effects, covariates and noise for
    the fixed spatial patterns of ``cfg``. Returns a mapping
    ``n -> {"bias": list, "norm": float}``.
    """
    target = to_coeffs(make_truth(cfg.replace(n=1), basis, np.random.default_rng(0)).beta, basis)
    out = {}
    for n in ns:
        c = cfg.replace(n=int(n))
        est = np.empty((reps, basis.L))
        for r in range(reps):
            rng = np.random.default_rng([seed, int(n), r])
            truth = make_truth(c, basis, rng)
            data = simulate_dataset(truth, c, rng)
            Mt = data.M @ basis.psi / basis.p
            est[r] = ridge_theta_beta(Mt, data.X, data.C, data.Y, basis.eigenvalues, truth.sigma_Y**2, sigma_beta2)
        bias = est.mean(axis=0) - target
        out[int(n)] = {"bias": bias.tolist(), "norm": float(np.linalg.norm(bias))}
    return out


@dataclass
class IdentifiabilityReport:
    n: int
    n_columns: int
    rank: int
    singular_values: np.ndarray
    condition_number: float
    rank_deficient: bool
    design: str

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_columns": self.n_columns,
            "rank": self.rank,
            "smallest_singular_value": float(self.singular_values[-1]),
            "largest_singular_value": float(self.singular_values[0]),
            "condition_number": self.condition_number,
            "rank_deficient": self.rank_deficient,
            "design": self.design,
        }


def identifiability_check(X: np.ndarray, C: np.ndarray, eta: np.ndarray, basis: KernelBasis | None = None,
                          support=None, rtol: float = 1e-8) -> IdentifiabilityReport:
    """Rank diagnostics of the confounder design ``[X, C, eta-columns]``.

    Low-rank form (``support`` omitted): the eta columns are the basis
    coefficients of ``eta`` (``eta`` may be ``(n, p)`` fields with ``basis``,
    or ``(n, L)`` coefficients directly). Sparse form: the columns are
    ``eta[:, support]``. A design is flagged when the smallest singular value
    is below ``rtol`` times the largest.
    """
    X = np.asarray(X, float).ravel()
    n = X.size
    C = np.asarray(C, float).reshape(n, -1)
    eta = np.asarray(eta, float)
    if eta.shape[0] != n:
        raise ArgumentError("eta and X disagree on n")
    if support is not None:
        idx = np.asarray(support)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        cols = eta[:, idx]
        design = "sparse"
    else:
        cols = to_coeffs(eta, basis) if basis is not None and eta.shape[1] == basis.p else eta
        design = "low-rank"
    m = cols.shape[1]
    q = C.shape[1]
    if not n > 1 + q + m:
        raise PreconditionError(f"need n > 1 + q + m, got n={n}, q={q}, m={m}")
    B = np.column_stack([X, C, cols])
    s = np.linalg.svd(B, compute_uv=False)
    tol = rtol * s[0] if s[0] > 0 else 0.0
    rank = int(np.sum(s > tol)) if s[0] > 0 else 0
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    return IdentifiabilityReport(n, B.shape[1], rank, s, cond, bool(s[-1] < tol or s[0] == 0), design)
