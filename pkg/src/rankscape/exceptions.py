"""Shared exception types for the package error taxonomy."""


class RankscapeError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(RankscapeError, ValueError):
    """Malformed or out-of-contract input (shape, finiteness, ranges)."""


class NumericalError(RankscapeError, RuntimeError):
    """A numerical routine failed to converge or produced garbage."""


class RankOverflowError(RankscapeError, ValueError):
    """A matrix exceeds the rank budget required by the operation."""


class InsufficientHistoryError(RankscapeError, ValueError):
    """A trajectory is too short for the requested analysis."""


class EstimationError(RankscapeError, RuntimeError):
    """A Monte-Carlo estimate could not be formed (all samples degenerate)."""


class InapplicableTheoryError(RankscapeError, ValueError):
    """Classification requested outside the theory's hypotheses."""


class ConfigError(RankscapeError, ValueError):
    """Experiment configuration failed validation."""
