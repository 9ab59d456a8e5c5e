"""Indirect and direct effect summaries from paired posterior draws."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ArgumentError
from .grid_kernel import KernelBasis, from_coeffs
from .mediator import MediatorChains
from .outcome import OutcomeChains

__all__ = [
    "NieDraws",
    "EffectSummary",
    "nie_chain",
    "credible_interval",
    "select_active",
    "summarize_effects",
    "write_effects",
    "read_effects_json",
]

PAIRINGS = ("cyclic", "mean_alpha")


@dataclass
class NieDraws:
    """Per-draw indirect effects: ``spatial`` is ``(T, p)``, ``scalar`` is ``(T,)``."""

    spatial: np.ndarray
    scalar: np.ndarray
    pairing: str = "cyclic"


def pair_indices(n_med: int, n_out: int) -> np.ndarray:
    """Mediator draw index for each outcome draw: index-matched, recycled cyclically when short."""
    if n_med < 1 or n_out < 1:
        raise ArgumentError("both chains need at least one retained draw")
    return np.arange(n_out) % n_med


def nie_chain(med: MediatorChains, out: OutcomeChains, basis: KernelBasis, pairing: str = "cyclic") -> NieDraws:
    """Spatial NIE ``alpha_t(s) beta_t(s)`` and scalar NIE ``sum_j alpha_t beta_t / p`` per draw.

    ``pairing='cyclic'`` pairs outcome draw ``t`` with mediator draw
    ``t mod T_med``; ``pairing='mean_alpha'`` uses the posterior-mean alpha
    for every outcome draw.
    """
    if pairing not in PAIRINGS:
        raise ArgumentError(f"unknown pairing {pairing!r}; expected one of {PAIRINGS}")
    if med.n_draws == 0 or out.n_draws == 0:
        raise ArgumentError("empty chain")
    beta = from_coeffs(out.theta_beta, basis)
    if pairing == "cyclic":
        alpha = from_coeffs(med.theta_alpha[pair_indices(med.n_draws, out.n_draws)], basis)
    else:
        alpha = from_coeffs(med.theta_alpha.mean(axis=0), basis)[None, :]
    spatial = alpha * beta
    return NieDraws(spatial, spatial.sum(axis=1) / basis.p, pairing)


def _check_level(level: float) -> None:
    if not 0 < level < 1:
        raise ArgumentError(f"credible level must be in (0, 1), got {level}")


def credible_interval(draws: np.ndarray, level: float = 0.95, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Equal-tailed interval from linearly interpolated (type 7) quantiles."""
    _check_level(level)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(draws, float), [tail, 1.0 - tail], axis=axis, method="linear")
    return lo, hi


def select_active(chain: np.ndarray, level: float = 0.95, cell_measure: float | None = None) -> tuple[np.ndarray, dict]:
    """Flag voxels whose equal-tailed interval excludes zero.

    Parameters
    ----------
    chain : (T, p) array of per-draw effects, T >= 2.
    level : credible level in (0, 1).
    cell_measure : weight for the summed effects; defaults to ``1 / p``.

    Returns
    -------
    mask : (p,) boolean array.
    summary : counts and weighted sums of posterior means over active
        voxels, split by sign.
    """
    _check_level(level)
    chain = np.asarray(chain, float)
    if chain.ndim == 1:
        chain = chain[:, None]
    if chain.shape[0] < 2:
        raise ArgumentError("need at least 2 draws per voxel")
    lo, hi = credible_interval(chain, level)
    mask = (lo > 0) | (hi < 0)
    mean = chain.mean(axis=0)
    w = 1.0 / chain.shape[1] if cell_measure is None else float(cell_measure)
    pos = mask & (mean > 0)
    neg = mask & (mean < 0)
    summary = {
        "level": float(level),
        "n_active": int(mask.sum()),
        "n_positive": int(pos.sum()),
        "n_negative": int(neg.sum()),
        "sum_positive": float(mean[pos].sum() * w),
        "sum_negative": float(mean[neg].sum() * w),
    }
    return mask, summary


@dataclass
class EffectSummary:
    spatial_mean: np.ndarray
    spatial_lo: np.ndarray
    spatial_hi: np.ndarray
    active: np.ndarray
    nie_mean: float
    nie_lo: float
    nie_hi: float
    nde_mean: float
    nde_lo: float
    nde_hi: float
    selection: dict
    level: float = 0.95
    pairing: str = "cyclic"
    n_draws: int = 0

    def scalars(self) -> dict:
        return {
            "nie_mean": self.nie_mean,
            "nie_ci": [self.nie_lo, self.nie_hi],
            "nde_mean": self.nde_mean,
            "nde_ci": [self.nde_lo, self.nde_hi],
            "level": self.level,
            "pairing": self.pairing,
            "n_draws": self.n_draws,
            **self.selection,
        }


def summarize_effects(med: MediatorChains, out: OutcomeChains, basis: KernelBasis, level: float = 0.95,
                      pairing: str = "cyclic") -> EffectSummary:
    _check_level(level)
    draws = nie_chain(med, out, basis, pairing)
    mask, sel = select_active(draws.spatial, level, basis.cell_measure)
    lo, hi = credible_interval(draws.spatial, level)
    nlo, nhi = credible_interval(draws.scalar, level)
    glo, ghi = credible_interval(out.gamma, level)
    return EffectSummary(
        spatial_mean=draws.spatial.mean(axis=0),
        spatial_lo=lo,
        spatial_hi=hi,
        active=mask,
        nie_mean=float(draws.scalar.mean()),
        nie_lo=float(nlo),
        nie_hi=float(nhi),
        nde_mean=float(out.gamma.mean()),
        nde_lo=float(glo),
        nde_hi=float(ghi),
        selection=sel,
        level=float(level),
        pairing=pairing,
        n_draws=int(out.n_draws),
    )


def write_effects(summary: EffectSummary, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effects.json").write_text(json.dumps(summary.scalars(), indent=2))
    pd.DataFrame(
        {
            "voxel": np.arange(1, summary.spatial_mean.size + 1),
            "mean": summary.spatial_mean,
            "lo": summary.spatial_lo,
            "hi": summary.spatial_hi,
            "active": summary.active.astype(int),
        }
    ).to_csv(out / "effects.csv", index=False, float_format="%.17g")
    return out


def read_effects_json(path) -> dict:
    return json.loads(Path(path).read_text())
