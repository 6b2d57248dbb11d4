"""Exception types raised across the package."""


class VBInitError(Exception):
    """Base class for all errors raised by vbinit."""


class NotPositiveDefinite(VBInitError, ValueError):
    """A matrix expected to be symmetric positive definite is not."""


class GeometryMismatch(VBInitError, ValueError):
    """Tensor dimensions do not agree with a patch geometry."""


class ShapeMismatch(VBInitError, ValueError):
    """Array shapes are inconsistent with the network layout."""


class KindMismatch(VBInitError, TypeError):
    """An operation was applied to the wrong kind of layer."""


class BadOneHot(VBInitError, ValueError):
    """A label matrix row is not a valid one-hot encoding."""


class NonFiniteLoss(VBInitError, FloatingPointError):
    """The objective evaluated to NaN or infinity.

    When raised from the training loop, ``records`` holds the curve
    collected so far and the network has been restored to the last
    parameters that produced a finite objective.
    """

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records if records is not None else []


class NonFiniteGradient(VBInitError, FloatingPointError):
    """A gradient handed to the optimizer contains NaN or infinity."""


class DatasetTooSmall(VBInitError, ValueError):
    """No mini-batch can be formed from the dataset."""


class EmptyDataset(VBInitError, ValueError):
    """A data file contained no rows."""


class ParseError(VBInitError, ValueError):
    """A data or config file could not be parsed.

    ``row`` and ``column`` locate the offending cell (1-based, header is row 1)
    when known.
    """

    def __init__(self, message, row=None, column=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column!r})" if column is not None else ")")
        super().__init__(message + loc)
        self.row = row
        self.column = column


class ConfigError(VBInitError, ValueError):
    """An experiment configuration is invalid."""
