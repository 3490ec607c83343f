import numpy as np

from cian.errors import ParameterError
from cian.numerics.autodiff import Tensor, value_and_grad


def _loss_value(loss_fn, params) -> float:
    leaves = {k: Tensor(v, name=k) for k, v in params.items()}
    out = loss_fn(leaves)
    return out.item() if isinstance(out, Tensor) else float(out)


def finite_difference_check(loss_fn, params, eps=1e-5, analytic=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|g_a - g_n| / |g_n|``; where ``|g_a| < 1e-8`` (or the
    numeric gradient is exactly zero) the absolute error is used instead.
    ``analytic`` may be supplied to check an externally computed gradient.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if analytic is None:
        _, analytic = value_and_grad(loss_fn, params)
    worst = 0.0
    for name, theta in params.items():
        g_a = np.asarray(analytic[name], dtype=np.float64)
        flat = theta.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = _loss_value(loss_fn, params)
            flat[idx] = orig - eps
            down = _loss_value(loss_fn, params)
            flat[idx] = orig
            g_n = (up - down) / (2.0 * eps)
            a = g_a.reshape(-1)[idx]
            err = abs(a - g_n)
            if abs(a) >= 1e-8 and g_n != 0.0:
                err /= abs(g_n)
            worst = max(worst, err)
    return worst
