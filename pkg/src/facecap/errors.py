"""Exception hierarchy shared by every facecap module."""


class FacecapError(Exception):
    """Base class for all errors raised by facecap."""


class ConstraintViolation(FacecapError, ValueError):
    pass


class NonFinite(FacecapError, ValueError):
    pass


class DimensionMismatch(FacecapError, ValueError):
    pass


class TopologyMismatch(FacecapError, ValueError):
    pass


class ParseError(FacecapError, ValueError):
    """Malformed input record.

    ``line`` and ``column`` are 1-based when known.  For basis files
    ``shape`` names the blendshape block being read.
    """

    def __init__(self, message, line=None, column=None, shape=None):
        self.line = line
        self.column = column
        self.shape = shape
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if shape is not None:
            where.append(f"shape {shape}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class InvalidKernel(FacecapError, ValueError):
    pass


class WindowNotFull(FacecapError, ValueError):
    pass


class DegenerateInnovation(FacecapError, ArithmeticError):
    pass


class InvalidTemperature(FacecapError, ValueError):
    pass


class ShapeMismatch(FacecapError, ValueError):
    pass


class NonMonotoneFrame(FacecapError, ValueError):
    pass


class ChannelCountMismatch(FacecapError, ValueError):
    pass


class LengthMismatch(FacecapError, ValueError):
    pass


class ConfigError(FacecapError, ValueError):
    pass


class Divergence(FacecapError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
