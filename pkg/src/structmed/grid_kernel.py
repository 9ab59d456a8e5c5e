"""Spatial grid, Matérn covariance and the truncated Mercer eigenbasis.

Every functional parameter (alpha, beta, xi_k, eta_i, the dense nu pattern)
is represented by ``L`` coefficients on the same basis. The basis is
orthonormal under the cell measure ``1/p``::

    sum_j psi[j, l] * psi[j, l'] / p == 1{l == l'}

so ``to_coeffs`` is a weighted inner product and ``from_coeffs`` is a plain
matrix product.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import ArgumentError, KernelError

__all__ = [
    "Grid2D",
    "MaternParams",
    "KernelBasis",
    "matern_cov",
    "kernel_matrix",
    "eigenbasis",
    "to_coeffs",
    "from_coeffs",
    "reconstruction_error",
]

_MAGIC = b"KBAS"


@dataclass(frozen=True)
class Grid2D:
    """Regular ``n1 x n2`` partition of the unit square.

    Locations are cell centres in row-major order: index ``r * n2 + c`` sits
    at ``((r + 0.5) / n1, (c + 0.5) / n2)``.
    """

    n1: int
    n2: int

    def __post_init__(self):
        if int(self.n1) < 1 or int(self.n2) < 1:
            raise ArgumentError(f"grid sides must be positive, got {self.n1}x{self.n2}")

    @property
    def p(self) -> int:
        return self.n1 * self.n2

    @property
    def cell_measure(self) -> float:
        return 1.0 / self.p

    @property
    def locations(self) -> np.ndarray:
        r = (np.arange(self.n1) + 0.5) / self.n1
        c = (np.arange(self.n2) + 0.5) / self.n2
        rr, cc = np.meshgrid(r, c, indexing="ij")
        return np.column_stack([rr.ravel(), cc.ravel()])

    def distances(self) -> np.ndarray:
        s = self.locations
        diff = s[:, None, :] - s[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class MaternParams:
    """Matérn smoothness ``tau`` and length-scale ``rho``."""

    tau: float = 0.2
    rho: float = 2.0

    def __post_init__(self):
        if not (self.tau > 0 and self.rho > 0):
            raise ArgumentError(f"Matérn parameters must be positive: tau={self.tau}, rho={self.rho}")


def _small_x_deficit(x: np.ndarray, tau: float) -> np.ndarray:
    """Leading term of ``1 - C`` as ``x -> 0`` (``x`` already scaled by ``sqrt(2 tau) / rho``)."""
    if tau < 1.0:
        return gamma_fn(1.0 - tau) / gamma_fn(1.0 + tau) * (0.5 * x) ** (2.0 * tau)
    if tau == 1.0:
        return 0.25 * x * x * (np.log(2.0 / x) + 0.5 - np.euler_gamma)
    return 0.25 * x * x / (tau - 1.0)


def matern_cov(d, params: MaternParams):
    """Matérn correlation at Euclidean distance ``d``.

    C(x) = 2^(1-tau) / Gamma(tau) * (sqrt(2 tau) x)^tau * K_tau(sqrt(2 tau) x),
    with ``x = d / rho`` and C(0) = 1. Accepts scalars or arrays.
    """
    d_arr = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d_arr)):
        raise KernelError("distance must be finite")
    if np.any(d_arr < 0):
        raise KernelError("distance must be non-negative")
    tau = params.tau
    x = np.sqrt(2.0 * tau) * d_arr / params.rho
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            vals = 2.0 ** (1.0 - tau) / gamma_fn(tau) * xp**tau * kv(tau, xp)
        # K_tau underflows to 0 far out; the product is then 0, not nan
        vals = np.where(np.isfinite(vals), vals, 0.0)
        # near 0 the Bessel form loses ~1e-14 to rounding; use the leading series term there
        t = _small_x_deficit(xp, tau)
        vals = np.where((xp < 1e-3) & (t < 1e-12), 1.0 - t, vals)
        out[pos] = np.clip(vals, 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def kernel_matrix(grid: Grid2D, params: MaternParams) -> np.ndarray:
    return matern_cov(grid.distances(), params)


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """Truncated eigensystem of the measure-weighted kernel operator.

    Attributes
    ----------
    eigenvalues : (L,) array, non-increasing and strictly positive.
    psi : (p, L) array of eigenfunction values at the grid points.
    """

    eigenvalues: np.ndarray
    psi: np.ndarray
    grid: Grid2D | None = field(default=None)

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float)
        psi = np.array(self.psi, dtype=float)
        if psi.ndim != 2 or lam.ndim != 1 or psi.shape[1] != lam.shape[0]:
            raise ArgumentError(f"inconsistent basis shapes: psi {psi.shape}, eigenvalues {lam.shape}")
        if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise KernelError("eigenvalues must be strictly positive and non-increasing")
        lam.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "psi", psi)

    @property
    def p(self) -> int:
        return self.psi.shape[0]

    @property
    def L(self) -> int:
        return self.psi.shape[1]

    @property
    def cell_measure(self) -> float:
        return 1.0 / self.p

    def truncate(self, L: int) -> "KernelBasis":
        if not 1 <= L <= self.L:
            raise ArgumentError(f"cannot truncate a basis of size {self.L} to {L}")
        return KernelBasis(self.eigenvalues[:L], self.psi[:, :L], self.grid)

    def gram(self) -> np.ndarray:
        """Weighted Gram matrix; the identity up to rounding."""
        return self.psi.T @ self.psi * self.cell_measure

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            # magic, p, L and a reserved zero word: 16 bytes
            fh.write(_MAGIC + struct.pack("<III", self.p, self.L, 0))
            fh.write(self.eigenvalues.astype("<f8").tobytes())
            fh.write(np.asfortranarray(self.psi).astype("<f8").tobytes(order="F"))

    @classmethod
    def load(cls, path) -> "KernelBasis":
        raw = Path(path).read_bytes()
        if len(raw) < 12 or raw[:4] != _MAGIC:
            raise ArgumentError(f"{path}: not a kernel basis file")
        p, L = struct.unpack("<II", raw[4:12])
        expected = 12 + 8 * (L + p * L)
        offset = 12
        if len(raw) == expected + 4:
            offset = 16
        elif len(raw) != expected:
            raise ArgumentError(f"{path}: expected {expected} bytes, found {len(raw)}")
        lam = np.frombuffer(raw, dtype="<f8", count=L, offset=offset)
        psi = np.frombuffer(raw, dtype="<f8", count=p * L, offset=offset + 8 * L)
        return cls(lam.astype(float), psi.reshape((p, L), order="F").astype(float))


def eigenbasis(grid: Grid2D, params: MaternParams, L: int) -> KernelBasis:
    """Top-``L`` eigenpairs of the kernel operator discretised on ``grid``.

    Dense symmetric eigendecomposition of ``K / p``; eigenvectors are scaled
    by ``sqrt(p)`` so the weighted orthonormality holds, and each is signed so
    its first nonzero entry is positive.
    """
    p = grid.p
    L = int(L)
    if L < 1 or L > p:
        raise ArgumentError(f"need 1 <= L <= p={p}, got L={L}")
    K = kernel_matrix(grid, params)
    if not np.allclose(K, K.T, atol=1e-12, rtol=0):
        raise KernelError("kernel matrix is not symmetric")
    vals, vecs = np.linalg.eigh(K / p)
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    knorm = np.linalg.norm(K, 2)
    # vals live on the K/p scale
    if vals[-1] * p < -1e-8 * knorm:
        raise KernelError(f"kernel matrix is not PSD: smallest eigenvalue {vals[-1] * p:.3e}")
    vals = np.maximum(vals, 1e-12 * vals[0])
    psi = vecs[:, :L] * np.sqrt(p)
    for l in range(L):
        nz = np.flatnonzero(np.abs(psi[:, l]) > 1e-12)
        if nz.size and psi[nz[0], l] < 0:
            psi[:, l] = -psi[:, l]
    return KernelBasis(vals[:L].copy(), psi, grid)


def to_coeffs(f, basis: KernelBasis) -> np.ndarray:
    """Weighted projection ``theta_l = sum_j f[j] psi[j, l] / p``.

    ``f`` may be a single field of length ``p`` or a stack of fields with
    shape ``(..., p)``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[-1:] != (basis.p,):
        raise ArgumentError(f"field has trailing length {f.shape[-1:] }, basis has p={basis.p}")
    return f @ basis.psi * basis.cell_measure


def from_coeffs(theta, basis: KernelBasis) -> np.ndarray:
    """Field values ``f[j] = sum_l theta_l psi[j, l]``; accepts ``(..., L)``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (basis.L,):
        raise ArgumentError(f"coefficients have trailing length {theta.shape[-1:]}, basis has L={basis.L}")
    return theta @ basis.psi.T


def reconstruction_error(K: np.ndarray, basis: KernelBasis) -> float:
    """Frobenius error of the rank-``L`` kernel reconstruction."""
    approx = (basis.psi * basis.eigenvalues) @ basis.psi.T * basis.cell_measure * basis.p
    return float(np.linalg.norm(K - approx))
