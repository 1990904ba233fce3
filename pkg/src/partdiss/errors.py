"""Exception types shared across the package."""
from __future__ import annotations


class ConfigError(ValueError):
    """Inconsistent or malformed run configuration."""


class HorizonError(IndexError):
    """A request reaches outside the two-sided noise horizon."""


class BlowUpError(FloatingPointError):
    """Non-finite state encountered during time stepping."""

    def __init__(self, t: float, what: str = "state"):
        super().__init__(f"non-finite {what} at t={t!r}")
        self.t = t


class InfeasibleConstants(ValueError):
    """No admissible growth constants exist on the sampled box.

    ``condition`` names the validator condition that cannot be met.
    """

    def __init__(self, message: str, condition: str = "constants"):
        super().__init__(message)
        self.condition = condition
