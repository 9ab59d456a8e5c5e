"""Ground-truth fields and synthetic datasets for the six benchmark cases.

Mediator and outcome are generated voxel-wise::

    M_i(s_j) = alpha(s_j) X_i + sum_k xi_k(s_j) C_ik + eta_i(s_j) + eps_M
    Y_i      = sum_j beta(s_j) M_i(s_j) / p + gamma X_i + zeta . C_i
               + sum_j nu(s_j) eta_i(s_j) / p + eps_Y

The spatial patterns (alpha, beta, xi, the nu patterns) are fixed across
replications and cases; only eta, the covariates and the noise change with
the replication seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ArgumentError
from .grid_kernel import Grid2D, KernelBasis, MaternParams, eigenbasis, from_coeffs, to_coeffs

__all__ = [
    "CaseConfig",
    "Truth",
    "Dataset",
    "case_config",
    "basis_for",
    "make_truth",
    "simulate_dataset",
    "simulate",
    "write_dataset",
    "read_dataset",
    "read_truth",
]

NU_PATTERNS = ("dense", "sparse", "zero")
# field amplitude of each nu pattern before the per-config nu_scale multiplier
NU_AMPLITUDE = {"dense": 5.0, "sparse": 5.0, "zero": 0.0}

# seed of the generator behind the fixed (replication-invariant) patterns
PATTERN_SEED = 20240611

# (n, grid side, L) per scale
_SCALES = {"desk": (150, 20, 40), "full": (300, 40, 120)}


@dataclass
class CaseConfig:
    case: int = 1
    n: int = 150
    n1: int = 20
    n2: int = 20
    q: int = 2
    L: int = 40
    sigma_eta: float = 0.5
    sigma_M: float = 2.0
    nu_pattern: str = "dense"
    seed: int = 0
    tau: float = 0.2
    rho: float = 2.0
    sigma_Y: float = 0.5
    gamma: float = 0.5
    zeta: tuple = (0.3, -0.3)
    nu_scale: float = 1.0

    def __post_init__(self):
        if not 1 <= int(self.case) <= 6:
            raise ArgumentError(f"case id must be in 1..6, got {self.case}")
        if self.nu_pattern not in NU_PATTERNS:
            raise ArgumentError(f"unknown nu pattern {self.nu_pattern!r}; expected one of {NU_PATTERNS}")
        for name in ("n", "n1", "n2", "L"):
            if int(getattr(self, name)) < 1:
                raise ArgumentError(f"{name} must be positive")
        if self.q < 0:
            raise ArgumentError("q must be non-negative")
        if not (self.sigma_eta > 0 and self.sigma_M > 0 and self.sigma_Y > 0):
            raise ArgumentError("noise scales must be positive")
        self.zeta = tuple(float(z) for z in self.zeta)
        if len(self.zeta) != self.q:
            if len(self.zeta) > self.q:
                self.zeta = self.zeta[: self.q]
            else:
                self.zeta = self.zeta + (0.0,) * (self.q - len(self.zeta))

    @property
    def p(self) -> int:
        return self.n1 * self.n2

    @property
    def grid(self) -> Grid2D:
        return Grid2D(self.n1, self.n2)

    @property
    def kernel(self) -> MaternParams:
        return MaternParams(self.tau, self.rho)

    def replace(self, **changes) -> "CaseConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["zeta"] = list(self.zeta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CaseConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names - {"p"}
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})


def case_config(case: int, scale: str = "desk", seed: int = 0, **overrides) -> CaseConfig:
    """Settings of benchmark case 1-6 at ``desk`` or ``full`` scale.

    Defaults are sigma_eta=0.5, sigma_M=2 and the scale's base ``n``. Case 4
    doubles ``n``; case 5 sets sigma_eta=1; case 6 sets sigma_M=4.
    """
    if scale not in _SCALES:
        raise ArgumentError(f"unknown scale {scale!r}")
    n, side, L = _SCALES[scale]
    settings = {
        1: dict(nu_pattern="dense"),
        2: dict(nu_pattern="sparse"),
        3: dict(nu_pattern="zero"),
        4: dict(nu_pattern="sparse", n=2 * n),
        5: dict(nu_pattern="dense", sigma_eta=1.0),
        6: dict(nu_pattern="dense", sigma_M=4.0),
    }
    if case not in settings:
        raise ArgumentError(f"case id must be in 1..6, got {case}")
    kw = dict(case=case, n=n, n1=side, n2=side, L=L, seed=seed)
    kw.update(settings[case])
    kw.update(overrides)
    return CaseConfig(**kw)


@lru_cache(maxsize=8)
def _cached_basis(n1: int, n2: int, tau: float, rho: float, L: int) -> KernelBasis:
    return eigenbasis(Grid2D(n1, n2), MaternParams(tau, rho), L)


def basis_for(cfg: CaseConfig) -> KernelBasis:
    return _cached_basis(cfg.n1, cfg.n2, float(cfg.tau), float(cfg.rho), cfg.L)


@dataclass
class Truth:
    alpha: np.ndarray
    beta: np.ndarray
    nu: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    gamma: float
    zeta: np.ndarray
    sigma_M: float
    sigma_Y: float
    sigma_eta: float

    @property
    def p(self) -> int:
        return self.alpha.shape[0]

    @property
    def nie(self) -> float:
        """Scalar indirect effect of a unit exposure contrast."""
        return float(np.dot(self.alpha, self.beta) / self.p)

    @property
    def nie_map(self) -> np.ndarray:
        return self.alpha * self.beta

    def confounder_term(self) -> np.ndarray:
        """U_i = sum_j nu(s_j) eta_i(s_j) / p."""
        return self.eta @ self.nu / self.p

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "nu": self.nu.tolist(),
            "eta": self.eta.tolist(),
            "xi": self.xi.tolist(),
            "gamma": float(self.gamma),
            "zeta": np.asarray(self.zeta).tolist(),
            "sigma_M": float(self.sigma_M),
            "sigma_Y": float(self.sigma_Y),
            "sigma_eta": float(self.sigma_eta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Truth":
        return cls(
            alpha=np.asarray(d["alpha"], float),
            beta=np.asarray(d["beta"], float),
            nu=np.asarray(d["nu"], float),
            eta=np.asarray(d["eta"], float).reshape(-1, len(d["alpha"])),
            xi=np.asarray(d["xi"], float).reshape(-1, len(d["alpha"])),
            gamma=float(d["gamma"]),
            zeta=np.asarray(d["zeta"], float),
            sigma_M=float(d["sigma_M"]),
            sigma_Y=float(d["sigma_Y"]),
            sigma_eta=float(d["sigma_eta"]),
        )


@dataclass
class Dataset:
    M: np.ndarray
    X: np.ndarray
    C: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.M = np.asarray(self.M, float)
        self.X = np.asarray(self.X, float).ravel()
        self.Y = np.asarray(self.Y, float).ravel()
        C = np.asarray(self.C, float)
        self.C = C.reshape(len(self.X), -1) if C.size else np.zeros((len(self.X), 0))
        n = len(self.X)
        if self.M.ndim != 2 or self.M.shape[0] != n or len(self.Y) != n or self.C.shape[0] != n:
            raise ArgumentError(
                f"inconsistent dataset shapes: M {self.M.shape}, X {self.X.shape}, C {self.C.shape}, Y {self.Y.shape}"
            )
        for name in ("M", "X", "C", "Y"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ArgumentError(f"{name} contains non-finite values")

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def p(self) -> int:
        return self.M.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.M[idx], self.X[idx], self.C[idx], self.Y[idx])


def _smooth_disc(loc: np.ndarray, centre, radius: float, edge: float = 0.04) -> np.ndarray:
    r = np.hypot(loc[:, 0] - centre[0], loc[:, 1] - centre[1])
    return 1.0 / (1.0 + np.exp((r - radius) / edge))


def alpha_pattern(grid: Grid2D) -> np.ndarray:
    loc = grid.locations
    return 1.0 * _smooth_disc(loc, (0.32, 0.34), 0.2) + 0.8 * _smooth_disc(loc, (0.72, 0.7), 0.16)


def beta_pattern(grid: Grid2D) -> np.ndarray:
    loc = grid.locations
    return 1.0 * _smooth_disc(loc, (0.4, 0.4), 0.22) - 0.6 * _smooth_disc(loc, (0.7, 0.25), 0.14)


def sparse_nu_pattern(grid: Grid2D, m: int = 30) -> np.ndarray:
    """``m`` voxels of value +1 in a contiguous block centred inside alpha's main region."""
    loc = grid.locations
    d = np.hypot(loc[:, 0] - 0.32, loc[:, 1] - 0.34)
    # nearest m voxels form a compact block; ties broken by index
    idx = np.lexsort((np.arange(grid.p), d))[:m]
    nu = np.zeros(grid.p)
    nu[idx] = 1.0
    return nu


def dense_nu_pattern(basis: KernelBasis, n_coef: int = 10, width: float = 0.25) -> np.ndarray:
    """Smooth field spanned by basis functions 2..``n_coef``, unit RMS.

    The coefficients are those of a broad Gaussian bump centred in alpha's
    main region with the leading (near-constant) mode removed, so the field
    is nonzero almost everywhere and overlaps the mediator pathway. The sign
    is negative so that the confounder pulls the indirect effect downward.
    """
    if basis.grid is None:
        raise ArgumentError("dense nu pattern needs a basis with grid locations")
    loc = basis.grid.locations
    bump = np.exp(-((loc[:, 0] - 0.32) ** 2 + (loc[:, 1] - 0.34) ** 2) / (2.0 * width**2))
    theta = to_coeffs(bump, basis)
    theta[0] = 0.0
    theta[min(n_coef, basis.L):] = 0.0
    nu = from_coeffs(theta, basis)
    return -nu / np.sqrt(np.mean(nu**2))


def xi_pattern(basis: KernelBasis, q: int, scale: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(PATTERN_SEED + 2)
    theta = rng.standard_normal((q, basis.L)) * scale * np.sqrt(basis.eigenvalues)
    return from_coeffs(theta, basis)


def make_truth(cfg: CaseConfig, basis: KernelBasis, rng: np.random.Generator) -> Truth:
    """Fixed spatial patterns for ``cfg`` plus a fresh draw of the individual effects.

    eta_i has basis coefficients ``N(0, sigma_eta^2 lambda_l)``.
    """
    if basis.p != cfg.p or basis.L != cfg.L:
        raise ArgumentError(f"basis (p={basis.p}, L={basis.L}) does not match config (p={cfg.p}, L={cfg.L})")
    grid = cfg.grid
    if cfg.nu_pattern == "dense":
        nu = cfg.nu_scale * NU_AMPLITUDE["dense"] * dense_nu_pattern(basis)
    elif cfg.nu_pattern == "sparse":
        nu = cfg.nu_scale * NU_AMPLITUDE["sparse"] * sparse_nu_pattern(grid)
    elif cfg.nu_pattern == "zero":
        nu = np.zeros(cfg.p)
    else:
        raise ArgumentError(f"unknown nu pattern {cfg.nu_pattern!r}")
    theta_eta = rng.standard_normal((cfg.n, cfg.L)) * (cfg.sigma_eta * np.sqrt(basis.eigenvalues))
    return Truth(
        alpha=alpha_pattern(grid),
        beta=beta_pattern(grid),
        nu=nu,
        eta=from_coeffs(theta_eta, basis),
        xi=xi_pattern(basis, cfg.q),
        gamma=float(cfg.gamma),
        zeta=np.asarray(cfg.zeta, float),
        sigma_M=float(cfg.sigma_M),
        sigma_Y=float(cfg.sigma_Y),
        sigma_eta=float(cfg.sigma_eta),
    )


def draw_covariates(n: int, q: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Binary exposure and ``q`` confounders alternating N(0,1) and Bernoulli(0.5)."""
    X = rng.binomial(1, 0.5, size=n).astype(float)
    C = np.empty((n, q))
    for k in range(q):
        C[:, k] = rng.standard_normal(n) if k % 2 == 0 else rng.binomial(1, 0.5, size=n)
    return X, C


def mediator_mean(truth: Truth, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """E[M_i(s_j)] given covariates and individual effects."""
    return np.outer(X, truth.alpha) + C @ truth.xi + truth.eta


def outcome_mean(truth: Truth, M: np.ndarray, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    p = truth.p
    return M @ truth.beta / p + truth.gamma * X + C @ truth.zeta + truth.confounder_term()


def simulate_dataset(truth: Truth, cfg: CaseConfig, rng: np.random.Generator) -> Dataset:
    """Draw covariates, mediator images and outcomes.

    Draw order (fixed for reproducibility): X, C columns, mediator noise
    ``(n, p)``, outcome noise ``(n,)``.
    """
    n, p = truth.eta.shape
    if n != cfg.n or p != cfg.p or truth.xi.shape != (cfg.q, p):
        raise ArgumentError(
            f"truth dimensions (n={n}, p={p}, xi {truth.xi.shape}) do not match config (n={cfg.n}, p={cfg.p}, q={cfg.q})"
        )
    X, C = draw_covariates(n, cfg.q, rng)
    M = mediator_mean(truth, X, C) + truth.sigma_M * rng.standard_normal((n, p))
    Y = outcome_mean(truth, M, X, C) + truth.sigma_Y * rng.standard_normal(n)
    return Dataset(M, X, C, Y)


def simulate(cfg: CaseConfig) -> tuple[Dataset, Truth, KernelBasis]:
    """Basis, truth and dataset for one replication, seeded by ``cfg.seed``."""
    basis = basis_for(cfg)
    rng = np.random.default_rng(cfg.seed)
    truth = make_truth(cfg, basis, rng)
    return simulate_dataset(truth, cfg, rng), truth, basis


def write_dataset(out_dir, data: Dataset, truth: Truth | None = None, cfg: CaseConfig | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = "%.17g"
    np.savetxt(out / "M.csv", data.M, delimiter=",", fmt=fmt)
    np.savetxt(out / "X.csv", data.X[:, None], delimiter=",", fmt=fmt)
    np.savetxt(out / "C.csv", data.C, delimiter=",", fmt=fmt)
    np.savetxt(out / "Y.csv", data.Y[:, None], delimiter=",", fmt=fmt)
    if truth is not None:
        doc = truth.to_dict()
        if cfg is not None:
            doc["config"] = cfg.to_dict()
        (out / "truth.json").write_text(json.dumps(doc))
    return out


def _load_matrix(path: Path, n: int | None = None) -> np.ndarray:
    if path.stat().st_size == 0:
        return np.zeros((n or 0, 0))
    return np.loadtxt(path, delimiter=",", ndmin=2)


def read_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    for name in ("M.csv", "X.csv", "C.csv", "Y.csv"):
        if not (d / name).exists():
            raise ArgumentError(f"{d}: missing {name}")
    M = _load_matrix(d / "M.csv")
    X = _load_matrix(d / "X.csv").ravel()
    C = _load_matrix(d / "C.csv", len(X))
    if C.shape[0] != len(X) and C.size == len(X):
        C = C.reshape(len(X), 1)
    Y = _load_matrix(d / "Y.csv").ravel()
    return Dataset(M, X, C, Y)


def read_truth(path) -> tuple[Truth, CaseConfig | None]:
    doc = json.loads(Path(path).read_text())
    cfg = CaseConfig.from_dict(doc["config"]) if "config" in doc else None
    return Truth.from_dict(doc), cfg
