"""Exception hierarchy shared by all modules."""


class DecayRateError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(DecayRateError, ValueError):
    """An argument is outside its admissible range."""


class DegenerateInputError(DecayRateError, ArithmeticError):
    """The input carries no information about the decay (singular system)."""


class FitRangeError(DecayRateError, ValueError):
    """The energy decay curve does not reach the requested fit range."""

    def __init__(self, message, deepest_db):
        super().__init__(message)
        self.deepest_db = deepest_db


class WavFormatError(DecayRateError, ValueError):
    """A WAV file uses an encoding this package cannot read."""
