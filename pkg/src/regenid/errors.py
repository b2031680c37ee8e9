"""Exception hierarchy shared across the package."""


class RegenError(Exception):
    """Base class for all package errors."""


class ShapeError(RegenError, ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(RegenError, FloatingPointError):
    """A value that must be finite is NaN or infinite."""


class BoundaryError(RegenError, IndexError):
    """A time index lies before the first admissible lag position."""


class DivergenceError(RegenError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class ConfigError(RegenError, ValueError):
    """Invalid or inconsistent configuration."""


class DatasetFormatError(RegenError, ValueError):
    """Malformed dataset file."""
