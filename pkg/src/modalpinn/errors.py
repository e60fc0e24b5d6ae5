"""Exception hierarchy shared by every module of the package."""


class ModalPinnError(Exception):
    """Base class for all errors raised by modalpinn."""


class ConfigurationError(ModalPinnError, ValueError):
    """Invalid sizes, intervals, flags or inconsistent problem/config pairs."""


class ShapeError(ModalPinnError, ValueError):
    """Array dimensions do not agree."""


class DomainError(ModalPinnError, ValueError):
    """Argument outside the mathematical domain of a function."""


class DataError(ModalPinnError, ValueError):
    """Input data violates a structural assumption (symmetry, location)."""


class StateError(ModalPinnError, RuntimeError):
    """Operation called in the wrong order."""


class DivergenceError(ModalPinnError, RuntimeError):
    """A solver or optimizer produced non-finite values.

    ``sample_index`` names the offending Monte Carlo realization when known;
    ``checkpoint`` carries the last finite state for training runs.
    """

    def __init__(self, message, sample_index=None, checkpoint=None):
        super().__init__(message)
        self.sample_index = sample_index
        self.checkpoint = checkpoint


class CrossingError(ModalPinnError, RuntimeError):
    """Two BO eigenvalues met; the closed-form M and S matrices are singular."""

    def __init__(self, message, time=None, pair=None):
        super().__init__(message)
        self.time = time
        self.pair = pair


class DegenerateModeError(ModalPinnError, ValueError):
    """A mode has zero energy where a normalization needs it to be positive."""


class DegenerateReferenceError(ModalPinnError, ValueError):
    """Relative error requested against an identically zero reference."""
