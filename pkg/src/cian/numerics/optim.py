from dataclasses import dataclass, field

import numpy as np

from cian.errors import DimensionError, ParameterError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, lr=0.01, beta1=0.9, beta2=0.999, eps_hat=1e-8, weight_decay=0.0):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Weight decay is an L2 term folded into the gradient before the moments.
    Inputs are not mutated.
    """
    if lr <= 0:
        raise ParameterError(f"lr must be positive, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ParameterError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    step = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, theta in params.items():
        theta = np.asarray(theta, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise DimensionError(f"adam_step: gradient for {name!r} has shape {g.shape}, parameter {theta.shape}")
        g = g + weight_decay * theta
        m = beta1 * state.m.get(name, np.zeros_like(theta)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(theta)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        new_params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps_hat)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, step)
