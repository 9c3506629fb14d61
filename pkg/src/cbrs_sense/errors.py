"""Exception hierarchy shared by every module."""


class CbrsError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class InvalidConfig(CbrsError, ValueError):
    pass


class InputTooShort(CbrsError, ValueError):
    pass


class AlreadyCalibrated(CbrsError, ValueError):
    pass


class UnitsNotCalibrated(CbrsError, ValueError):
    pass


class BandOutsideSpectrogram(CbrsError, ValueError):
    pass


class TooFewTimeRows(CbrsError, ValueError):
    pass


class InvalidSpec(CbrsError, ValueError):
    pass


class InsufficientStratum(CbrsError, ValueError):
    pass


class IoFailure(CbrsError, OSError):
    pass


class EmptyTrainingSet(CbrsError, ValueError):
    pass


class DimensionMismatch(CbrsError, ValueError):
    pass


class ShapeMismatch(CbrsError, ValueError):
    pass


class NonFiniteLoss(CbrsError, FloatingPointError):
    pass


class DegenerateLabels(CbrsError, ValueError):
    pass


class NoSignals(CbrsError, ValueError):
    pass


class Unachievable(CbrsError, ValueError):
    pass


class NoConvergenceWarning(UserWarning):
    """Solver stopped at its iteration cap; the returned model is usable but flagged."""


class DegenerateComponentWarning(UserWarning):
    """A mixture component's variance hit the floor."""
