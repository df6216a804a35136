"""Exception types shared across the package."""


class CompOrthError(Exception):
    """Base class for all package errors."""


class ConfigError(CompOrthError, ValueError):
    """Invalid configuration (alphabet, grid, hyperparameters, plan)."""


class RenderBoundsError(CompOrthError):
    """A word does not fit the canvas, or adjacent glyphs would overlap."""

    def __init__(self, message, assignment_id=None):
        if assignment_id is not None:
            message = f"assignment {assignment_id}: {message}"
        super().__init__(message)
        self.assignment_id = assignment_id


class SplitError(CompOrthError):
    """A split would violate the partition invariant (e.g. empty side)."""


class ShapeError(CompOrthError, ValueError):
    """Operands have incompatible shapes."""

    def __init__(self, op, lhs, rhs, detail=""):
        msg = f"{op}: incompatible shapes {tuple(lhs)} and {tuple(rhs)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.lhs = tuple(lhs)
        self.rhs = tuple(rhs)


class NumericalError(CompOrthError, FloatingPointError):
    """A computation produced NaN or Inf."""


class NotTrainedError(CompOrthError):
    """A model was used before it was trained or loaded."""


class MetricError(CompOrthError, ValueError):
    """A disentanglement metric is undefined for the given input."""
