import numpy as np

from cian.errors import ParameterError


def kaiming_init(shape, fan_in, rng: np.random.Generator) -> np.ndarray:
    """He-normal draw: i.i.d. N(0, 2/fan_in)."""
    if fan_in < 1:
        raise ParameterError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape))
