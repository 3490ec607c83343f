"""Exception hierarchy shared by every cian module."""


class CianError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CianError, ValueError):
    """Operand shapes do not conform."""


class DegenerateInputError(CianError, ValueError):
    """Input is well-formed but makes the quantity undefined (e.g. a zero vector)."""


class CapabilityError(CianError, TypeError):
    """A computation uses a primitive the autodiff engine cannot differentiate."""


class ParameterError(CianError, ValueError):
    """A scalar/config parameter is out of its admissible range."""


class ConfigError(CianError, ValueError):
    """A configuration document is malformed or has unknown keys."""


class DataFormatError(CianError, ValueError):
    """A dataset or checkpoint file could not be parsed."""


class NumericalError(CianError, ArithmeticError):
    """A computation produced NaN/Inf where a finite value is required."""
