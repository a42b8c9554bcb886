"""Exception types raised across the package."""


class NoiseSketchError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(NoiseSketchError, ValueError):
    pass


class NotPSD(NoiseSketchError, ArithmeticError):
    """A matrix expected to be positive semidefinite has a negative pivot."""


class TooFewSamples(NoiseSketchError, ValueError):
    pass


class InfeasibleSpec(NoiseSketchError, ValueError):
    """A mask specification cannot be realized on the requested grid."""


class SizeLimit(NoiseSketchError, ValueError):
    pass


class DegenerateReference(NoiseSketchError, ValueError):
    """The reference map is constant, so correlation metrics are undefined."""


class ConfigError(NoiseSketchError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
