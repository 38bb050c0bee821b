"""Exception types shared across the package.

Three failure classes are distinguished so callers (and the CLI exit-code
mapping) can react differently: bad inputs, unsupported requests, and
numerical breakdown at runtime.
"""

from __future__ import annotations


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class CapabilityError(RuntimeError):
    """The request is valid but outside what this implementation supports."""


class NumericError(RuntimeError):
    """A numerical routine failed to reach its target accuracy.

    Carries an optional ``payload`` with partial results / diagnostics.
    """

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class DivergenceError(NumericError):
    """A simulated chain left the finite range; ``payload`` holds the partial run."""

    def __init__(self, message: str, payload=None, step: int | None = None):
        super().__init__(message, payload)
        self.step = step


class ExperimentError(RuntimeError):
    """Too many replicate-level failures to report a meaningful result."""

    def __init__(self, message: str, failures=None):
        super().__init__(message)
        self.failures = failures or []
