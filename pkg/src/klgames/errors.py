"""Exception types shared across the package."""


class KLGamesError(Exception):
    """Base class for errors raised by this package."""


class DimensionMismatch(KLGamesError):
    """Two array arguments that must share a shape do not."""


class SupportMismatch(KLGamesError):
    """A distribution puts mass where its reference has none."""


class DegenerateReference(KLGamesError):
    """A reference weight vector is unusable (no positive mass)."""


class NoConvergence(KLGamesError):
    """An iterative solver ran out of iterations.

    Carries the best certified gap seen and the corresponding iterate so
    callers can inspect how close the solver got.
    """

    def __init__(self, message, best_gap=None, best_pair=None, iterations=None):
        super().__init__(message)
        self.best_gap = best_gap
        self.best_pair = best_pair
        self.iterations = iterations


class ConfigInvalid(KLGamesError):
    """An experiment configuration failed validation.

    ``field`` names the offending entry (dotted path into the config).
    """

    def __init__(self, field, reason):
        super().__init__(f"config field '{field}': {reason}")
        self.field = field
        self.reason = reason


class EnvironmentInvalid(KLGamesError):
    """An environment description could not be turned into an instance."""


class InsufficientData(KLGamesError):
    """Not enough rows survive the burn-in to fit growth models."""


class ParseError(KLGamesError):
    """An input document could not be parsed.

    ``line`` and ``column`` locate the problem when known.
    """

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column
