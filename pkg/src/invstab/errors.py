"""Exception hierarchy for invstab."""

from typing import Optional


class InvstabError(Exception):
    """Base class for all invstab errors."""


class ConfigError(InvstabError):
    """Bad parameter, missing gain, infeasible impedance or malformed scenario."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(InvstabError):
    """Non-finite value, singular matrix or solver failure."""


class EquilibriumError(NumericError):
    """Newton iteration did not reach an operating point."""

    def __init__(self, message: str, residual: float, iterate=None, iterations: int = 0):
        self.residual = residual
        self.iterate = iterate
        self.iterations = iterations
        super().__init__(
            f"no equilibrium: {message} (residual {residual:.3e} after {iterations} iterations)"
        )
