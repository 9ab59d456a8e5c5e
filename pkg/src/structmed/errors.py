"""Exception hierarchy.

Argument problems derive from ``ValueError`` so ordinary callers can catch
them the usual way; numerical failures carry enough context (iteration,
voxel) to locate the problem in a long chain.
"""

from __future__ import annotations


class StructMedError(Exception):
    """Base class for all package errors."""


class ArgumentError(StructMedError, ValueError):
    """Invalid shapes, lengths or option values."""


class PreconditionError(ArgumentError):
    """A documented precondition (e.g. a sample-size inequality) is violated."""


class KernelError(StructMedError):
    """Kernel evaluation or eigendecomposition failure."""


class FitError(StructMedError):
    """The data cannot support the requested fit (too few subjects, degenerate design)."""


class NumericalError(StructMedError, ArithmeticError):
    """A linear-algebra step failed or produced non-finite values."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class SamplerError(NumericalError):
    """Non-finite likelihood, gradient or draw inside an MCMC update."""


class MergeError(StructMedError):
    """Benchmark reports with incompatible configurations were combined."""
