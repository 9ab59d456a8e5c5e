"""Posterior sampling for the image-on-scalar mediator model.

All updates run in basis coordinates. With ``Mt_i = psi.T @ M_i / p`` the
voxel likelihood factorises exactly as::

    sum_j (M_ij - [psi theta]_j)^2 = R_out_i + p * ||Mt_i - theta||^2

where ``R_out_i = ||M_i||^2 - p ||Mt_i||^2`` does not involve any
coefficient. The coefficient-space likelihood precision is therefore
``w = p / sigma_M2`` and ``R_out`` only enters the update of ``sigma_M2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ArgumentError, FitError, SamplerError
from .grid_kernel import KernelBasis, from_coeffs
from .simulate import Dataset

__all__ = [
    "MediatorOptions",
    "MediatorState",
    "MediatorChains",
    "ProjectedData",
    "project_dataset",
    "fit_mediator",
    "mala_step_alpha",
    "log_post_alpha",
    "grad_log_post_alpha",
    "posterior_mean_eta",
    "write_mediator_chains",
    "read_mediator_chains",
    "write_etahat",
    "read_etahat",
    "inv_gamma",
    "as_generator",
]

VARIANCE_NAMES = ("sigma_M2", "sigma_alpha2", "sigma_xi2", "sigma_eta2")


def as_generator(rng) -> tuple[np.random.Generator, int | None]:
    """Accept a Generator, an integer seed or None; return the generator and the seed if known."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        return np.random.default_rng(), None
    seed = int(rng)
    return np.random.default_rng(seed), seed


def inv_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    """One draw from IG(shape, scale), density proportional to x^(-shape-1) exp(-scale/x)."""
    return float(scale / rng.gamma(shape))


@dataclass
class MediatorOptions:
    """Sampler settings.

    ``fixed`` maps variance names (``sigma_M2``, ``sigma_alpha2``,
    ``sigma_xi2``, ``sigma_eta2``) to values held constant during sampling.
    """

    n_iter: int = 1000
    keep_fraction: float = 0.1
    alpha_update: str = "mala"
    target_accept: float = 0.574
    step: float | None = None
    a0: float = 2.0
    b0: float = 1.0
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.n_iter) < 1:
            raise ArgumentError("n_iter must be positive")
        if not 0 < self.keep_fraction <= 1:
            raise ArgumentError("keep_fraction must be in (0, 1]")
        if self.alpha_update not in ("mala", "gibbs"):
            raise ArgumentError(f"alpha_update must be 'mala' or 'gibbs', got {self.alpha_update!r}")
        if not 0 < self.target_accept < 1:
            raise ArgumentError("target_accept must be in (0, 1)")
        if self.step is not None and not self.step > 0:
            raise ArgumentError("step must be positive")
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
class ProjectedData:
    """Coefficient-space view of a dataset."""

    Mt: np.ndarray  # (n, L)
    X: np.ndarray
    C: np.ndarray
    rss_out: float  # part of sum ||M_i||^2 outside the basis span
    p: int
    eigenvalues: np.ndarray

    @property
    def n(self) -> int:
        return self.Mt.shape[0]

    @property
    def L(self) -> int:
        return self.Mt.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[1]


def project_dataset(data: Dataset, basis: KernelBasis) -> ProjectedData:
    if data.p != basis.p:
        raise ArgumentError(f"dataset has p={data.p} voxels, basis has p={basis.p}")
    Mt = data.M @ basis.psi / basis.p
    rss_out = float(np.sum(data.M**2) - basis.p * np.sum(Mt**2))
    # rounding can push an exact-span dataset slightly negative
    rss_out = max(rss_out, 0.0)
    return ProjectedData(Mt, data.X, data.C, rss_out, basis.p, basis.eigenvalues)


def _projected(data, basis) -> ProjectedData:
    return data if isinstance(data, ProjectedData) else project_dataset(data, basis)


@dataclass
class MediatorState:
    theta_alpha: np.ndarray
    theta_xi: np.ndarray
    theta_eta: np.ndarray
    sigma_M2: float = 1.0
    sigma_alpha2: float = 1.0
    sigma_xi2: float = 1.0
    sigma_eta2: float = 1.0

    @classmethod
    def initial(cls, n: int, q: int, L: int, fixed: dict | None = None) -> "MediatorState":
        st = cls(np.zeros(L), np.zeros((q, L)), np.zeros((n, L)))
        for k, v in (fixed or {}).items():
            setattr(st, k, float(v))
        return st


def _alpha_residual(state: MediatorState, proj: ProjectedData) -> np.ndarray:
    return proj.Mt - proj.C @ state.theta_xi - state.theta_eta


def log_post_alpha(theta: np.ndarray, state: MediatorState, data, basis: KernelBasis | None = None) -> float:
    """Log full conditional of ``theta_alpha`` up to a constant."""
    proj = _projected(data, basis)
    R = _alpha_residual(state, proj) - np.outer(proj.X, theta)
    w = proj.p / state.sigma_M2
    return float(-0.5 * w * np.sum(R * R) - 0.5 * np.sum(theta**2 / (state.sigma_alpha2 * proj.eigenvalues)))


def grad_log_post_alpha(theta: np.ndarray, state: MediatorState, data, basis: KernelBasis | None = None) -> np.ndarray:
    proj = _projected(data, basis)
    R = _alpha_residual(state, proj)
    w = proj.p / state.sigma_M2
    g = w * (proj.X @ R - theta * (proj.X @ proj.X)) - theta / (state.sigma_alpha2 * proj.eigenvalues)
    return g


class _AlphaTarget:
    """Cached sufficient statistics of the alpha conditional for one sweep."""

    def __init__(self, state: MediatorState, proj: ProjectedData):
        R = _alpha_residual(state, proj)
        self.w = proj.p / state.sigma_M2
        self.sxx = float(proj.X @ proj.X)
        self.sxr = proj.X @ R
        self.prior_prec = 1.0 / (state.sigma_alpha2 * proj.eigenvalues)

    def logp(self, th: np.ndarray) -> float:
        # -(w/2) sum_i ||R_i - th X_i||^2 without the theta-free term
        return float(self.w * (th @ self.sxr) - 0.5 * self.w * self.sxx * (th @ th) - 0.5 * np.sum(self.prior_prec * th * th))

    def grad(self, th: np.ndarray) -> np.ndarray:
        return self.w * (self.sxr - self.sxx * th) - self.prior_prec * th


def _mala(target, theta: np.ndarray, step: float, rng: np.random.Generator, iteration=None):
    g = target.grad(theta)
    if not np.all(np.isfinite(g)):
        raise SamplerError("non-finite MALA gradient for alpha", iteration)
    h2 = step * step
    mean_fwd = theta + 0.5 * h2 * g
    prop = mean_fwd + step * rng.standard_normal(theta.shape)
    g_prop = target.grad(prop)
    lp_old = target.logp(theta)
    lp_new = target.logp(prop)
    if not np.all(np.isfinite(g_prop)) or not math.isfinite(lp_new):
        # a proposal in an overflow region is simply rejected
        return theta, False, 0.0
    mean_bwd = prop + 0.5 * h2 * g_prop
    log_q_fwd = -np.sum((prop - mean_fwd) ** 2) / (2 * h2)
    log_q_bwd = -np.sum((theta - mean_bwd) ** 2) / (2 * h2)
    log_a = lp_new - lp_old + log_q_bwd - log_q_fwd
    accept_prob = 1.0 if log_a >= 0 else math.exp(log_a)
    if rng.random() < accept_prob:
        return prop, True, accept_prob
    return theta, False, accept_prob


def mala_step_alpha(state: MediatorState, data, basis: KernelBasis | None, step: float, rng: np.random.Generator):
    """One MALA transition for ``theta_alpha``; returns ``(new_state, accepted)``.

    The new state shares every other field with ``state``.
    """
    if not step > 0:
        raise ArgumentError("MALA step must be positive")
    proj = _projected(data, basis)
    target = _AlphaTarget(state, proj)
    theta, accepted, _ = _mala(target, state.theta_alpha, step, rng)
    new = MediatorState(theta.copy(), state.theta_xi, state.theta_eta, state.sigma_M2,
                        state.sigma_alpha2, state.sigma_xi2, state.sigma_eta2)
    return new, accepted


def _gibbs_alpha(target: _AlphaTarget, rng: np.random.Generator) -> np.ndarray:
    prec = target.w * target.sxx + target.prior_prec
    return target.w * target.sxr / prec + rng.standard_normal(prec.shape) / np.sqrt(prec)


def _gibbs_xi(state: MediatorState, proj: ProjectedData, ctc_evals, ctc_evecs, rng) -> np.ndarray:
    q, L = proj.q, proj.L
    if q == 0:
        return np.zeros((0, L))
    w = proj.p / state.sigma_M2
    R = proj.Mt - np.outer(proj.X, state.theta_alpha) - state.theta_eta
    # rotate into the eigenbasis of C'C so each (k, l) precision is diagonal
    b = ctc_evecs.T @ (w * (proj.C.T @ R))  # (q, L)
    prec = w * ctc_evals[:, None] + 1.0 / (state.sigma_xi2 * proj.eigenvalues)[None, :]
    z = rng.standard_normal((q, L))
    return ctc_evecs @ (b / prec + z / np.sqrt(prec))


def _gibbs_eta(state: MediatorState, proj: ProjectedData, rng) -> np.ndarray:
    w = proj.p / state.sigma_M2
    R = proj.Mt - np.outer(proj.X, state.theta_alpha) - proj.C @ state.theta_xi
    prec = w + 1.0 / (state.sigma_eta2 * proj.eigenvalues)
    z = rng.standard_normal(R.shape)
    return (w * R) / prec + z / np.sqrt(prec)


def _update_variances(state: MediatorState, proj: ProjectedData, opts: MediatorOptions, rng) -> None:
    a0, b0 = opts.a0, opts.b0
    n, L, q, p = proj.n, proj.L, proj.q, proj.p
    lam = proj.eigenvalues
    fixed = opts.fixed
    if "sigma_M2" not in fixed:
        R = proj.Mt - np.outer(proj.X, state.theta_alpha) - proj.C @ state.theta_xi - state.theta_eta
        rss = proj.rss_out + p * float(np.sum(R * R))
        state.sigma_M2 = inv_gamma(rng, a0 + 0.5 * n * p, b0 + 0.5 * rss)
    if "sigma_alpha2" not in fixed:
        state.sigma_alpha2 = inv_gamma(rng, a0 + 0.5 * L, b0 + 0.5 * float(np.sum(state.theta_alpha**2 / lam)))
    if "sigma_xi2" not in fixed and q > 0:
        state.sigma_xi2 = inv_gamma(rng, a0 + 0.5 * q * L, b0 + 0.5 * float(np.sum(state.theta_xi**2 / lam)))
    if "sigma_eta2" not in fixed:
        state.sigma_eta2 = inv_gamma(rng, a0 + 0.5 * n * L, b0 + 0.5 * float(np.sum(state.theta_eta**2 / lam)))


@dataclass
class MediatorChains:
    """Retained draws of the mediator model (leading axis = retained iteration)."""

    theta_alpha: np.ndarray  # (T, L)
    theta_xi: np.ndarray  # (T, q, L)
    theta_eta: np.ndarray  # (T, n, L)
    sigma_M2: np.ndarray
    sigma_alpha2: np.ndarray
    sigma_xi2: np.ndarray
    sigma_eta2: np.ndarray
    n_iter: int
    burn_in: int
    acceptance: float = float("nan")
    step: float = float("nan")
    seed: int | None = None
    alpha_update: str = "mala"

    @property
    def n_draws(self) -> int:
        return self.theta_alpha.shape[0]

    @property
    def L(self) -> int:
        return self.theta_alpha.shape[1]

    def alpha_fields(self, basis: KernelBasis) -> np.ndarray:
        return from_coeffs(self.theta_alpha, basis)

    def meta(self) -> dict:
        return {
            "n_iter": int(self.n_iter),
            "burn_in": int(self.burn_in),
            "n_draws": int(self.n_draws),
            "acceptance": None if math.isnan(self.acceptance) else float(self.acceptance),
            "step": None if math.isnan(self.step) else float(self.step),
            "seed": self.seed,
            "alpha_update": self.alpha_update,
            "n": int(self.theta_eta.shape[1]),
            "q": int(self.theta_xi.shape[1]),
            "L": int(self.L),
        }


def _check_design(proj: ProjectedData) -> None:
    if proj.n < 2:
        raise FitError(f"need at least 2 subjects, got n={proj.n}")
    if proj.q == 0 and np.ptp(proj.X) == 0:
        raise FitError("exposure is constant and there are no covariates: the design is degenerate")


def fit_mediator(data: Dataset, basis: KernelBasis, opts: MediatorOptions | None = None, rng=None) -> MediatorChains:
    """Run the mediator-model sampler.

    Sweep order per iteration: alpha (MALA or Gibbs), xi, eta, variances.
    During burn-in the MALA step is tuned on the log scale toward
    ``opts.target_accept``; it is frozen for the retained draws.
    """
    opts = opts or MediatorOptions()
    rng, seed = as_generator(rng)
    proj = _projected(data, basis)
    if proj.L != basis.L:
        raise ArgumentError("projected data and basis disagree on L")
    _check_design(proj)
    n, q, L = proj.n, proj.q, proj.L
    state = MediatorState.initial(n, q, L, opts.fixed)
    ctc_evals, ctc_evecs = np.linalg.eigh(proj.C.T @ proj.C) if q > 0 else (np.zeros(0), np.zeros((0, 0)))
    ctc_evals = np.maximum(ctc_evals, 0.0)

    T = opts.n_keep
    burn = opts.burn_in
    out_alpha = np.empty((T, L))
    out_xi = np.empty((T, q, L))
    out_eta = np.empty((T, n, L))
    out_var = np.empty((T, 4))

    if opts.step is not None:
        step = float(opts.step)
    else:
        # scale of the stiffest direction at the initial variances
        prec = proj.p / state.sigma_M2 * float(proj.X @ proj.X) + 1.0 / (state.sigma_alpha2 * proj.eigenvalues.min())
        step = 1.0 / math.sqrt(prec)
    log_step = math.log(step)
    n_acc = 0
    n_prop = 0
    for it in range(int(opts.n_iter)):
        target = _AlphaTarget(state, proj)
        if opts.alpha_update == "mala":
            theta, accepted, a_prob = _mala(target, state.theta_alpha, math.exp(log_step), rng, it)
            state.theta_alpha = theta
            if it < burn:
                log_step += (a_prob - opts.target_accept) / math.sqrt(it + 1.0) * 2.0
            else:
                n_acc += accepted
                n_prop += 1
        else:
            state.theta_alpha = _gibbs_alpha(target, rng)
        state.theta_xi = _gibbs_xi(state, proj, ctc_evals, ctc_evecs, rng)
        state.theta_eta = _gibbs_eta(state, proj, rng)
        _update_variances(state, proj, opts, rng)
        if not (np.all(np.isfinite(state.theta_alpha)) and np.all(np.isfinite(state.theta_eta))):
            raise SamplerError("non-finite mediator draw", it)
        if it >= burn:
            t = it - burn
            out_alpha[t] = state.theta_alpha
            out_xi[t] = state.theta_xi
            out_eta[t] = state.theta_eta
            out_var[t] = (state.sigma_M2, state.sigma_alpha2, state.sigma_xi2, state.sigma_eta2)

    acceptance = n_acc / n_prop if n_prop else float("nan")
    return MediatorChains(
        out_alpha, out_xi, out_eta, out_var[:, 0].copy(), out_var[:, 1].copy(), out_var[:, 2].copy(),
        out_var[:, 3].copy(), int(opts.n_iter), burn, acceptance,
        math.exp(log_step) if opts.alpha_update == "mala" else float("nan"), seed, opts.alpha_update,
    )


def posterior_mean_eta(chains: MediatorChains, basis: KernelBasis) -> np.ndarray:
    """Voxel-space posterior mean of the individual effects, shape ``(n, p)``."""
    if chains.n_draws == 0:
        raise ArgumentError("mediator chain has no retained draws")
    out = from_coeffs(chains.theta_eta.mean(axis=0), basis)
    if not np.all(np.isfinite(out)):
        raise SamplerError("posterior mean of eta is not finite")
    return out


def write_mediator_chains(chains: MediatorChains, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T, q, L = chains.theta_xi.shape
    n = chains.theta_eta.shape[1]
    cols = {}
    for l in range(L):
        cols[f"theta_alpha_{l + 1}"] = chains.theta_alpha[:, l]
    for k in range(q):
        for l in range(L):
            cols[f"theta_xi_{k + 1}_{l + 1}"] = chains.theta_xi[:, k, l]
    for i in range(n):
        for l in range(L):
            cols[f"theta_eta_{i + 1}_{l + 1}"] = chains.theta_eta[:, i, l]
    for name in VARIANCE_NAMES:
        cols[name] = getattr(chains, name)
    pd.DataFrame(cols).to_csv(out / "chains.csv", index=False, float_format="%.17g")
    (out / "meta.json").write_text(json.dumps(chains.meta(), indent=2))
    return out


def _nan_if_none(v) -> float:
    return float("nan") if v is None else float(v)


def read_mediator_chains(path) -> MediatorChains:
    d = Path(path)
    meta = json.loads((d / "meta.json").read_text())
    df = pd.read_csv(d / "chains.csv", float_precision="round_trip")
    T = len(df)
    n, q, L = meta["n"], meta["q"], meta["L"]
    vals = df.to_numpy(dtype=float)
    c = 0
    alpha = vals[:, c:c + L]
    c += L
    xi = vals[:, c:c + q * L].reshape(T, q, L)
    c += q * L
    eta = vals[:, c:c + n * L].reshape(T, n, L)
    return MediatorChains(
        alpha.copy(), xi.copy(), eta.copy(), df["sigma_M2"].to_numpy(), df["sigma_alpha2"].to_numpy(),
        df["sigma_xi2"].to_numpy(), df["sigma_eta2"].to_numpy(), meta["n_iter"], meta["burn_in"],
        _nan_if_none(meta.get("acceptance")), _nan_if_none(meta.get("step")), meta.get("seed"),
        meta.get("alpha_update", "mala"),
    )


def write_etahat(etahat: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, etahat, delimiter=",", fmt="%.17g")
    return path


def read_etahat(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
