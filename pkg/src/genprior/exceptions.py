"""Exception types raised by genprior."""


class GenPriorError(Exception):
    """Base class for all library errors."""


class DimensionError(GenPriorError, ValueError):
    """Array shapes do not agree with the network or ensemble."""


class NondifferentiablePoint(GenPriorError):
    """A pre-activation is exactly zero and no tie-break direction was given."""


class ZeroVector(GenPriorError, ValueError):
    """An operation that needs a direction received the zero vector."""


class DomainError(GenPriorError, ValueError):
    """Angle argument outside [0, pi]."""


class BudgetExceeded(GenPriorError):
    """Requested work exceeds a configured size guard."""


class EmptyProbeSet(GenPriorError, ValueError):
    pass


class AllProbesDegenerate(GenPriorError):
    pass


class InvalidSpec(GenPriorError, ValueError):
    """Experiment specification failed validation."""


class IoFailure(GenPriorError, OSError):
    """An output artifact could not be written."""
