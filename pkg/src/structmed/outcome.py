"""Posterior sampling for the scalar outcome models.

Both models regress ``Y`` on the projected mediator ``Mt = M psi / p``, the
exposure and the covariates. The confounder-adjusted model adds
``U_i = sum_j nu_j delta_j etahat_ij / p`` with a voxel-wise spike-and-slab
prior on ``nu``; ``etahat`` is held fixed at the stage-one posterior mean.

In code the ``nu`` design is ``G = etahat / p`` (``n x p``), so
``U = G @ (nu * delta)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import pandas as pd
from scipy import linalg as sla

from .errors import ArgumentError, FitError, NumericalError, SamplerError
from .grid_kernel import KernelBasis, from_coeffs
from .mediator import as_generator, inv_gamma
from .simulate import Dataset

__all__ = [
    "OutcomeOptions",
    "OutcomeState",
    "OutcomeChains",
    "fit_bima",
    "fit_basmu",
    "fit_outcome",
    "update_theta_beta",
    "theta_beta_conditional",
    "update_nu_svd",
    "nu_design_factor",
    "update_delta_seq",
    "write_outcome_chains",
    "read_outcome_chains",
    "nu_design_scale",
]

MODELS = ("bima", "basmu")
# exponent e in c = p^-e for the confounder design G = c * etahat
NU_DESIGNS = {"sqrt": 0.5, "measure": 1.0, "raw": 0.0}
VARIANCE_NAMES = ("sigma_Y2", "sigma_beta2", "sigma_gamma2", "sigma_zeta2", "sigma_nu2")


def nu_design_scale(design: str, p: int) -> float:
    """Multiplier ``c`` in ``G = c * etahat`` for a named design convention."""
    if design not in NU_DESIGNS:
        raise ArgumentError(f"unknown nu design {design!r}")
    return float(p) ** -NU_DESIGNS[design]


@dataclass
class OutcomeOptions:
    """Sampler settings.

    ``fixed`` holds variances kept constant; ``fixed_delta`` (a 0/1 vector of
    length ``p``) freezes the selection indicators. ``nu_design`` sets the
    scale ``c`` of the confounder design ``G = c * etahat``: ``"sqrt"``
    (``c = p^-1/2``, the prior variance of ``G nu`` does not depend on grid
    resolution), ``"measure"`` (``c = 1/p``) or ``"raw"`` (``c = 1``).
    """

    n_iter: int = 20000
    keep_fraction: float = 0.1
    p_delta: float = 0.5
    beta_update: str = "gibbs"
    nu_svd: str = "factored"
    nu_design: str = "sqrt"
    target_accept: float = 0.574
    a0: float = 2.0
    b0: float = 1.0
    fixed: dict = field(default_factory=dict)
    fixed_delta: np.ndarray | None = None

    def __post_init__(self):
        if int(self.n_iter) < 1:
            raise ArgumentError("n_iter must be positive")
        if not 0 < self.keep_fraction <= 1:
            raise ArgumentError("keep_fraction must be in (0, 1]")
        if not 0 < self.p_delta < 1:
            raise ArgumentError("p_delta must be in (0, 1)")
        if self.beta_update not in ("gibbs", "mala"):
            raise ArgumentError(f"beta_update must be 'gibbs' or 'mala', got {self.beta_update!r}")
        if self.nu_svd not in ("factored", "direct"):
            raise ArgumentError(f"nu_svd must be 'factored' or 'direct', got {self.nu_svd!r}")
        if self.nu_design not in NU_DESIGNS:
            raise ArgumentError(f"nu_design must be one of {sorted(NU_DESIGNS)}, got {self.nu_design!r}")
        if not (self.a0 > 0 and self.b0 > 0):
            raise ArgumentError("hyperprior parameters must be positive")
        bad = set(self.fixed) - set(VARIANCE_NAMES)
        if bad:
            raise ArgumentError(f"unknown fixed variances: {sorted(bad)}")
        for k, v in self.fixed.items():
            if not v > 0:
                raise ArgumentError(f"fixed variance {k} must be positive")

    @property
    def n_keep(self) -> int:
        return max(1, int(round(self.n_iter * self.keep_fraction)))

    @property
    def burn_in(self) -> int:
        return int(self.n_iter) - self.n_keep


@dataclass
class OutcomeState:
    theta_beta: np.ndarray
    gamma: float
    zeta: np.ndarray
    nu: np.ndarray | None = None
    delta: np.ndarray | None = None
    sigma_Y2: float = 1.0
    sigma_beta2: float = 1.0
    sigma_gamma2: float = 1.0
    sigma_zeta2: float = 1.0
    sigma_nu2: float = 1.0

    def confounder_term(self, G: np.ndarray | None) -> np.ndarray | float:
        if G is None or self.nu is None:
            return 0.0
        return G @ (self.nu * self.delta)


@dataclass
class OutcomeChains:
    model: str
    theta_beta: np.ndarray  # (T, L)
    gamma: np.ndarray  # (T,)
    zeta: np.ndarray  # (T, q)
    sigma_Y2: np.ndarray
    sigma_beta2: np.ndarray
    sigma_gamma2: np.ndarray
    sigma_zeta2: np.ndarray
    nu: np.ndarray | None = None  # (T, p)
    delta: np.ndarray | None = None  # (T, p) of 0/1
    sigma_nu2: np.ndarray | None = None
    n_iter: int = 0
    burn_in: int = 0
    p_delta: float = 0.5
    seed: int | None = None
    acceptance: float = float("nan")
    nu_design: str = "sqrt"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ArgumentError(f"unknown model tag {self.model!r}")
        if self.model == "bima" and (self.nu is not None or self.delta is not None):
            raise ArgumentError("BIMA chains carry no nu/delta draws")

    @property
    def n_draws(self) -> int:
        return self.theta_beta.shape[0]

    @property
    def L(self) -> int:
        return self.theta_beta.shape[1]

    def beta_fields(self, basis: KernelBasis) -> np.ndarray:
        return from_coeffs(self.theta_beta, basis)

    def nu_effect(self) -> np.ndarray | None:
        """Effective ``nu * delta`` on the voxel-measure scale: confounder term ``etahat @ nu_eff / p``."""
        if self.nu is None:
            return None
        p = self.nu.shape[1]
        return self.nu * self.delta * (nu_design_scale(self.nu_design, p) * p)

    def meta(self) -> dict:
        return {
            "model": self.model,
            "n_iter": int(self.n_iter),
            "burn_in": int(self.burn_in),
            "n_draws": int(self.n_draws),
            "p_delta": float(self.p_delta),
            "seed": self.seed,
            "acceptance": None if math.isnan(self.acceptance) else float(self.acceptance),
            "L": int(self.L),
            "q": int(self.zeta.shape[1]),
            "p": None if self.nu is None else int(self.nu.shape[1]),
            "nu_design": self.nu_design,
        }


# ---------------------------------------------------------------------------
# single-parameter updates


def theta_beta_conditional(Mt: np.ndarray, resid: np.ndarray, eigenvalues: np.ndarray, sigma_Y2: float,
                           sigma_beta2: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and Cholesky factor (lower) of the precision of ``theta_beta | rest``.

    Precision ``diag(1 / (sigma_beta2 lambda)) + Mt' Mt / sigma_Y2``; mean
    ``precision^-1 Mt' resid / sigma_Y2``, where ``resid`` is the outcome minus
    every non-mediator term.
    """
    prec = Mt.T @ Mt / sigma_Y2
    prec[np.diag_indices_from(prec)] += 1.0 / (sigma_beta2 * eigenvalues)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:  # only reachable with non-finite inputs
        raise NumericalError(f"theta_beta precision is not positive definite: {exc}") from None
    mean = sla.cho_solve((chol, True), Mt.T @ resid / sigma_Y2)
    return mean, chol


def update_theta_beta(Mt: np.ndarray, resid: np.ndarray, eigenvalues: np.ndarray, sigma_Y2: float,
                      sigma_beta2: float, rng: np.random.Generator) -> np.ndarray:
    """Conjugate draw of ``theta_beta``; ``resid = Y - gamma X - C zeta - Uhat``."""
    assert sigma_Y2 > 0 and sigma_beta2 > 0
    mean, chol = theta_beta_conditional(Mt, resid, eigenvalues, sigma_Y2, sigma_beta2)
    z = rng.standard_normal(mean.shape)
    return mean + sla.solve_triangular(chol.T, z, lower=False)


def _mala_theta_beta(theta, Mt, resid, eigenvalues, sigma_Y2, sigma_beta2, step, rng):
    prior_prec = 1.0 / (sigma_beta2 * eigenvalues)
    MtM = Mt.T @ Mt
    Mtr = Mt.T @ resid

    def logp(th):
        return float((th @ Mtr - 0.5 * th @ MtM @ th) / sigma_Y2 - 0.5 * np.sum(prior_prec * th * th))

    def grad(th):
        return (Mtr - MtM @ th) / sigma_Y2 - prior_prec * th

    g = grad(theta)
    if not np.all(np.isfinite(g)):
        raise SamplerError("non-finite MALA gradient for theta_beta")
    h2 = step * step
    mf = theta + 0.5 * h2 * g
    prop = mf + step * rng.standard_normal(theta.shape)
    gp = grad(prop)
    mb = prop + 0.5 * h2 * gp
    log_a = logp(prop) - logp(theta) - np.sum((theta - mb) ** 2) / (2 * h2) + np.sum((prop - mf) ** 2) / (2 * h2)
    a = 1.0 if log_a >= 0 else math.exp(log_a) if np.isfinite(log_a) else 0.0
    if rng.random() < a:
        return prop, a
    return theta, a


def nu_design_factor(G: np.ndarray, rtol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``G = Q R`` with orthonormal ``Q`` (``n x r``) and ``r = rank(G)``.

    Singular values below ``rtol`` times the largest are dropped. Any column
    subset then satisfies ``G[:, S] = Q R[:, S]``, so its thin SVD follows from
    the SVD of the small ``r x |S|`` block.
    """
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((G.shape[0], 0)), np.zeros((0, G.shape[1]))
    r = int(np.sum(s > rtol * s[0]))
    return U[:, :r], s[:r, None] * Vt[:r]


def update_nu_svd(Y_nu: np.ndarray, G: np.ndarray, delta: np.ndarray, sigma_Y2: float, sigma_nu2: float,
                  rng: np.random.Generator, factor: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Draw ``nu`` given the selection state.

    Active columns ``G1 = G[:, delta == 1] = U D V'`` (thin SVD). When the
    active count ``k`` exceeds ``n`` an auxiliary-variable draw is used::

        a1 ~ N(0, s_nu I_k), a2 ~ N(0, s_Y I_r)
        nu1 = a1 + t V D (1 + t D^2)^-1 (U'Y - D V' a1 - a2),  t = s_nu / s_Y

    otherwise ``nu* ~ N(E1, V1)`` with ``V1 = (D^2/s_Y + 1/s_nu)^-1``,
    ``E1 = V1 D U'Y / s_Y`` and ``nu1 = V nu*``. Inactive entries come from the
    prior ``N(0, s_nu)``.

    With ``factor = nu_design_factor(G)`` the SVD is taken of the small block
    ``R[:, active]`` and only the ``r = rank(G)`` nonzero singular directions
    are kept. Directions with a zero singular value carry no likelihood, so
    their conditional is the prior and the sampled law is unchanged.
    """
    p = G.shape[1]
    active = np.flatnonzero(np.asarray(delta) == 1)
    nu = np.sqrt(sigma_nu2) * rng.standard_normal(p)
    k = active.size
    if k == 0:
        return nu
    n = G.shape[0]
    try:
        if factor is None:
            U, D, Vt = np.linalg.svd(G[:, active], full_matrices=False)
        else:
            Q, Rf = factor
            Us, D, Vt = np.linalg.svd(Rf[:, active], full_matrices=False)
            U = Q @ Us
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of the active nu design failed: {exc}") from None
    # overflow surfaces as a non-finite draw, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        V = Vt.T
        Ystar = U.T @ Y_nu
        if k > n:
            tau2 = sigma_nu2 / sigma_Y2
            a1 = np.sqrt(sigma_nu2) * rng.standard_normal(k)
            a2 = np.sqrt(sigma_Y2) * rng.standard_normal(D.size)
            w = Ystar - D * (Vt @ a1) - a2
            nu1 = a1 + tau2 * (V @ (D * w / (1.0 + tau2 * D * D)))
        else:
            V1 = 1.0 / (D * D / sigma_Y2 + 1.0 / sigma_nu2)
            E1 = V1 * D * Ystar / sigma_Y2
            nu_star = E1 + np.sqrt(V1) * rng.standard_normal(D.size)
            nu1 = V @ nu_star
            if D.size < k:
                # complete V with prior draws in its orthogonal complement
                z = np.sqrt(sigma_nu2) * rng.standard_normal(k)
                nu1 += z - V @ (Vt @ z)
    nu[active] = nu1
    if not np.all(np.isfinite(nu)):
        raise NumericalError("non-finite nu draw")
    return nu


@numba.njit(cache=True)
def _delta_sweep(Gt, gg, nu, delta, R, inv_s2, logit_p, u, probs):
    """Sequential Bernoulli updates of ``delta``; returns the first bad voxel or -1.

    For voxel j with ``c = G[:, j] nu_j``: if active, ``R1 = R`` and
    ``R0 = R + c``; otherwise ``R0 = R`` and ``R1 = R - c``.
    """
    p, n = Gt.shape
    for j in range(p):
        nj = nu[j]
        rc = 0.0
        for i in range(n):
            rc += R[i] * Gt[j, i]
        rc *= nj
        cc = gg[j] * nj * nj
        # ||R1||^2 - ||R0||^2
        if delta[j] == 1:
            d = -2.0 * rc - cc
        else:
            d = -2.0 * rc + cc
        log_odds = -0.5 * inv_s2 * d + logit_p
        if not np.isfinite(log_odds):
            return j
        if log_odds >= 0:
            p1 = 1.0 / (1.0 + math.exp(-log_odds))
        else:
            e = math.exp(log_odds)
            p1 = e / (1.0 + e)
        probs[j] = p1
        new = 1 if u[j] < p1 else 0
        if new != delta[j]:
            if new == 1:
                for i in range(n):
                    R[i] -= Gt[j, i] * nj
            else:
                for i in range(n):
                    R[i] += Gt[j, i] * nj
            delta[j] = new
    return -1


def update_delta_seq(R: np.ndarray, G: np.ndarray, nu: np.ndarray, delta: np.ndarray, sigma_Y2: float,
                     rng: np.random.Generator, p_delta: float = 0.5, Gt: np.ndarray | None = None,
                     gg: np.ndarray | None = None):
    """One ordered sweep over the selection indicators.

    ``R`` must equal ``Y_nu - G @ (nu * delta)`` on entry. Returns the new
    ``delta`` (int8), the carried residual and the per-voxel inclusion
    probabilities used. ``Gt`` and ``gg`` (``G.T`` contiguous and squared
    column norms) can be supplied to avoid recomputation.
    """
    if not 0 < p_delta < 1:
        raise ArgumentError("p_delta must be in (0, 1)")
    if Gt is None:
        Gt = np.ascontiguousarray(G.T)
    if gg is None:
        gg = np.einsum("ji,ji->j", Gt, Gt)
    delta = np.array(delta, dtype=np.int8)
    R = np.array(R, dtype=float)
    probs = np.empty(Gt.shape[0])
    u = rng.random(Gt.shape[0])
    bad = _delta_sweep(Gt, gg, np.asarray(nu, float), delta, R, 1.0 / sigma_Y2,
                       math.log(p_delta / (1.0 - p_delta)), u, probs)
    if bad >= 0:
        raise SamplerError(f"non-finite selection likelihood at voxel {bad}")
    return delta, R, probs


def _update_gamma_zeta(r: np.ndarray, XC: np.ndarray, XtX: np.ndarray, prior_var: np.ndarray, sigma_Y2: float, rng):
    prec = XtX / sigma_Y2
    prec[np.diag_indices_from(prec)] += 1.0 / prior_var
    chol = np.linalg.cholesky(prec)
    mean = sla.cho_solve((chol, True), XC.T @ r / sigma_Y2)
    return mean + sla.solve_triangular(chol.T, rng.standard_normal(mean.shape), lower=False)


# ---------------------------------------------------------------------------
# drivers


def _prepare(data: Dataset, basis: KernelBasis):
    if data.p != basis.p:
        raise ArgumentError(f"dataset has p={data.p} voxels, basis has p={basis.p}")
    if data.n < 2:
        raise FitError(f"need at least 2 subjects, got n={data.n}")
    if data.q == 0 and np.ptp(data.X) == 0:
        raise FitError("exposure is constant and there are no covariates: the design is degenerate")
    Mt = data.M @ basis.psi / basis.p
    return Mt


def _run(model: str, data: Dataset, basis: KernelBasis, G: np.ndarray | None, opts: OutcomeOptions, rng) -> OutcomeChains:
    rng, seed = as_generator(rng)
    Mt = _prepare(data, basis)
    n, L, q, p = data.n, basis.L, data.q, basis.p
    lam = basis.eigenvalues
    X, C, Y = data.X, data.C, data.Y
    XC = np.column_stack([X, C])
    XtX = XC.T @ XC
    a0, b0 = opts.a0, opts.b0
    fixed = opts.fixed

    st = OutcomeState(np.zeros(L), 0.0, np.zeros(q))
    for k, v in fixed.items():
        setattr(st, k, float(v))
    basmu = model == "basmu"
    if basmu:
        Gt = np.ascontiguousarray(G.T)
        gg = np.einsum("ji,ji->j", Gt, Gt)
        factor = nu_design_factor(G) if opts.nu_svd == "factored" else None
        st.nu = np.zeros(p)
        if opts.fixed_delta is not None:
            fd = np.asarray(opts.fixed_delta)
            if fd.shape != (p,) or not np.all((fd == 0) | (fd == 1)):
                raise ArgumentError("fixed_delta must be a 0/1 vector of length p")
            st.delta = fd.astype(np.int8)
        else:
            st.delta = np.ones(p, dtype=np.int8)

    T, burn = opts.n_keep, opts.burn_in
    o_beta = np.empty((T, L))
    o_gz = np.empty((T, 1 + q))
    o_var = np.empty((T, 5))
    o_nu = np.empty((T, p)) if basmu else None
    o_delta = np.empty((T, p), dtype=np.int8) if basmu else None

    step = 1.0 / math.sqrt(float(np.max(np.linalg.eigvalsh(Mt.T @ Mt))) + 1.0 / lam.min())
    log_step = math.log(step)
    n_acc = 0.0
    n_prop = 0
    U = np.zeros(n)
    for it in range(int(opts.n_iter)):
        lin = X * st.gamma + C @ st.zeta
        # theta_beta
        r = Y - lin - U
        if opts.beta_update == "gibbs":
            st.theta_beta = update_theta_beta(Mt, r, lam, st.sigma_Y2, st.sigma_beta2, rng)
        else:
            st.theta_beta, a = _mala_theta_beta(st.theta_beta, Mt, r, lam, st.sigma_Y2, st.sigma_beta2,
                                                math.exp(log_step), rng)
            if it < burn:
                log_step += (a - opts.target_accept) / math.sqrt(it + 1.0) * 2.0
            else:
                n_acc += a
                n_prop += 1
        med = Mt @ st.theta_beta
        if basmu:
            Y_nu = Y - lin - med
            st.nu = update_nu_svd(Y_nu, G, st.delta, st.sigma_Y2, st.sigma_nu2, rng, factor)
            if opts.fixed_delta is None:
                R = Y_nu - G @ (st.nu * st.delta)
                st.delta, R, _ = update_delta_seq(R, G, st.nu, st.delta, st.sigma_Y2, rng, opts.p_delta, Gt, gg)
                U = Y_nu - R
            else:
                U = G @ (st.nu * st.delta)
        # gamma, zeta jointly
        prior_var = np.concatenate([[st.sigma_gamma2], np.full(q, st.sigma_zeta2)])
        gz = _update_gamma_zeta(Y - med - U, XC, XtX, prior_var, st.sigma_Y2, rng)
        st.gamma, st.zeta = float(gz[0]), gz[1:]
        # variances
        resid = Y - med - XC @ gz - U
        if "sigma_Y2" not in fixed:
            st.sigma_Y2 = inv_gamma(rng, a0 + 0.5 * n, b0 + 0.5 * float(resid @ resid))
        if "sigma_beta2" not in fixed:
            st.sigma_beta2 = inv_gamma(rng, a0 + 0.5 * L, b0 + 0.5 * float(np.sum(st.theta_beta**2 / lam)))
        if "sigma_gamma2" not in fixed:
            st.sigma_gamma2 = inv_gamma(rng, a0 + 0.5, b0 + 0.5 * st.gamma**2)
        if "sigma_zeta2" not in fixed and q > 0:
            st.sigma_zeta2 = inv_gamma(rng, a0 + 0.5 * q, b0 + 0.5 * float(st.zeta @ st.zeta))
        if basmu and "sigma_nu2" not in fixed:
            st.sigma_nu2 = inv_gamma(rng, a0 + 0.5 * p, b0 + 0.5 * float(st.nu @ st.nu))
        if not (math.isfinite(st.sigma_Y2) and np.all(np.isfinite(st.theta_beta))):
            raise SamplerError("non-finite outcome draw", it)
        if it >= burn:
            t = it - burn
            o_beta[t] = st.theta_beta
            o_gz[t] = gz
            o_var[t] = (st.sigma_Y2, st.sigma_beta2, st.sigma_gamma2, st.sigma_zeta2, st.sigma_nu2)
            if basmu:
                o_nu[t] = st.nu
                o_delta[t] = st.delta
    return OutcomeChains(
        model, o_beta, o_gz[:, 0].copy(), o_gz[:, 1:].copy(), o_var[:, 0].copy(), o_var[:, 1].copy(),
        o_var[:, 2].copy(), o_var[:, 3].copy(), o_nu, o_delta, o_var[:, 4].copy() if basmu else None,
        int(opts.n_iter), burn, opts.p_delta, seed,
        n_acc / n_prop if n_prop else float("nan"), opts.nu_design,
    )


def fit_bima(data: Dataset, basis: KernelBasis, opts: OutcomeOptions | None = None, rng=None) -> OutcomeChains:
    """Sample the outcome model without a confounder term."""
    return _run("bima", data, basis, None, opts or OutcomeOptions(), rng)


def fit_basmu(data: Dataset, basis: KernelBasis, etahat: np.ndarray, opts: OutcomeOptions | None = None,
              rng=None) -> OutcomeChains:
    """Sample the confounder-adjusted outcome model given stage-one ``etahat`` (``n x p``).

    Per iteration: theta_beta, nu (SVD update), delta (sequential sweep),
    then (gamma, zeta) jointly and the variances.
    """
    etahat = np.asarray(etahat, float)
    if etahat.shape != (data.n, basis.p):
        raise ArgumentError(f"etahat has shape {etahat.shape}, expected {(data.n, basis.p)}")
    if not np.all(np.isfinite(etahat)):
        raise ArgumentError("etahat contains non-finite values")
    opts = opts or OutcomeOptions()
    return _run("basmu", data, basis, etahat * nu_design_scale(opts.nu_design, basis.p), opts, rng)


def fit_outcome(model: str, data: Dataset, basis: KernelBasis, etahat=None, opts=None, rng=None) -> OutcomeChains:
    if model == "bima":
        return fit_bima(data, basis, opts, rng)
    if model == "basmu":
        if etahat is None:
            raise ArgumentError("the basmu model needs etahat")
        return fit_basmu(data, basis, etahat, opts, rng)
    raise ArgumentError(f"unknown model {model!r}; expected one of {MODELS}")


# ---------------------------------------------------------------------------
# persistence


def write_outcome_chains(chains: OutcomeChains, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = {}
    for l in range(chains.L):
        cols[f"theta_beta_{l + 1}"] = chains.theta_beta[:, l]
    cols["gamma"] = chains.gamma
    for k in range(chains.zeta.shape[1]):
        cols[f"zeta_{k + 1}"] = chains.zeta[:, k]
    for name in ("sigma_Y2", "sigma_beta2", "sigma_gamma2", "sigma_zeta2"):
        cols[name] = getattr(chains, name)
    if chains.model == "basmu":
        cols["sigma_nu2"] = chains.sigma_nu2
        for j in range(chains.nu.shape[1]):
            cols[f"nu_{j + 1}"] = chains.nu[:, j]
        for j in range(chains.delta.shape[1]):
            cols[f"delta_{j + 1}"] = chains.delta[:, j]
    pd.DataFrame(cols).to_csv(out / "chains.csv", index=False, float_format="%.17g")
    (out / "meta.json").write_text(json.dumps(chains.meta(), indent=2))
    return out


def read_outcome_chains(path) -> OutcomeChains:
    d = Path(path)
    meta = json.loads((d / "meta.json").read_text())
    df = pd.read_csv(d / "chains.csv", float_precision="round_trip")
    L, q = meta["L"], meta["q"]
    beta = df[[f"theta_beta_{l + 1}" for l in range(L)]].to_numpy(float)
    zeta = df[[f"zeta_{k + 1}" for k in range(q)]].to_numpy(float).reshape(len(df), q)
    nu = delta = s_nu = None
    if meta["model"] == "basmu":
        p = meta["p"]
        nu = df[[f"nu_{j + 1}" for j in range(p)]].to_numpy(float)
        delta = df[[f"delta_{j + 1}" for j in range(p)]].to_numpy(np.int8)
        s_nu = df["sigma_nu2"].to_numpy(float)
    acc = meta.get("acceptance")
    return OutcomeChains(
        meta["model"], beta, df["gamma"].to_numpy(float), zeta, df["sigma_Y2"].to_numpy(float),
        df["sigma_beta2"].to_numpy(float), df["sigma_gamma2"].to_numpy(float), df["sigma_zeta2"].to_numpy(float),
        nu, delta, s_nu, meta["n_iter"], meta["burn_in"], meta["p_delta"], meta.get("seed"),
        float("nan") if acc is None else float(acc), meta.get("nu_design", "sqrt"),
    )
