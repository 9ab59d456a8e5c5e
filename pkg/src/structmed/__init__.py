"""Bayesian mediation analysis with a structured image mediator and latent confounders.

Two-stage workflow: simulate or load data, fit the mediator model to obtain
individual effects, fit the outcome model with (BASMU) or without (BIMA) the
confounder term, then summarize the natural indirect and direct effects.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (ArgumentError, FitError, KernelError, MergeError, NumericalError, PreconditionError,
                     SamplerError, StructMedError)
from .grid_kernel import Grid2D, KernelBasis, MaternParams, eigenbasis, from_coeffs, kernel_matrix, matern_cov, to_coeffs
from .simulate import CaseConfig, Dataset, Truth, case_config, simulate
from .mediator import MediatorChains, MediatorOptions, fit_mediator, posterior_mean_eta
from .outcome import OutcomeChains, OutcomeOptions, fit_basmu, fit_bima, fit_outcome
from .effects import EffectSummary, nie_chain, summarize_effects
from .bench import BenchOptions, BenchReport, run_case, summarize

__all__ = [
    "__version__",
    "StructMedError", "ArgumentError", "PreconditionError", "KernelError", "FitError", "NumericalError",
    "SamplerError", "MergeError",
    "Grid2D", "MaternParams", "KernelBasis", "matern_cov", "kernel_matrix", "eigenbasis", "to_coeffs", "from_coeffs",
    "CaseConfig", "Dataset", "Truth", "case_config", "simulate",
    "MediatorOptions", "MediatorChains", "fit_mediator", "posterior_mean_eta",
    "OutcomeOptions", "OutcomeChains", "fit_bima", "fit_basmu", "fit_outcome",
    "EffectSummary", "nie_chain", "summarize_effects",
    "BenchOptions", "BenchReport", "run_case", "summarize",
]
