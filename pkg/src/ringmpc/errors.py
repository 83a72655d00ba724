"""Exception types used across the package.

The CLI maps these onto distinct exit codes, so keep the split: bad
inputs/configuration, solver trouble, integrator trouble.
"""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    """An argument violates an operation's preconditions."""


class FrameDegeneracyError(ValueError):
    """Frame conversion is ill-defined (in-plane radius too small)."""


class SingularityError(ValueError):
    """Dynamics evaluated at a singular point (e.g. r = 0)."""


class IntegrationFailureError(RuntimeError):
    """Adaptive integration failed; carries the last valid time."""

    def __init__(self, message: str, time_reached: float):
        super().__init__(message)
        self.time_reached = time_reached


class SolverFailureError(RuntimeError):
    """A QP solve did not reach the required tolerance."""


class ScenarioError(ValueError):
    """Scenario is structurally invalid (e.g. too few survivors)."""


class ConfigError(ValueError):
    """Configuration file or CLI arguments are invalid."""
