"""Exception types shared across the toolkit."""


class FreqAlignError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(FreqAlignError, ValueError):
    """An argument violates an operation's preconditions."""


class DegenerateFitError(FreqAlignError, ValueError):
    """Too few usable points to fit a power law."""


class InvalidFitError(FreqAlignError, ValueError):
    """A power-law fit cannot be used for rescaling."""


class InvalidModelError(FreqAlignError, ValueError):
    """A model is missing, untrained or incompatible with the input."""


class StateError(FreqAlignError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class TrainingDivergedError(FreqAlignError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class UnsupportedDetectorError(FreqAlignError, TypeError):
    """The detector does not expose input gradients."""


class DataError(FreqAlignError, IOError):
    """Input files are unreadable or inconsistent."""
