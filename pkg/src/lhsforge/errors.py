"""Exception types shared across the package."""


class LhsForgeError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(LhsForgeError, ValueError):
    """An input violates a physical or structural invariant.

    The message names the violated invariant.
    """


class ShapeError(LhsForgeError, ValueError):
    """Operands have incompatible dimensions."""


class CapacityError(LhsForgeError, ValueError):
    """A request exceeds a supported size limit (dimension, outcome count)."""


class DegenerateParameterError(LhsForgeError, ValueError):
    """A reparameterized hidden state has vanishing normalization."""


class TrainingAbort(LhsForgeError, RuntimeError):
    """Training hit a non-recoverable numerical failure (NaN/Inf)."""


class NoBracketError(LhsForgeError, ValueError):
    """A threshold bracket cannot be formed from the given sweep records."""
