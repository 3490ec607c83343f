"""Hot kernels with a compiled backend and a numpy fallback.

The Cython extension ``_core`` is used when it imports; set
``CIAN_KERNELS=python`` to force the numpy fallback.  :data:`BACKEND` names
the active one.
"""

import importlib
import os

import numpy as np

from cian.kernels import _fallback

PACKAGE_CODES = {"dot": 0, "gaussian": 1, "kernel-gaussian": 2}

_core = None
if os.environ.get("CIAN_KERNELS", "").lower() != "python":
    try:
        _core = importlib.import_module("cian.kernels._core")
    except ImportError:  # extension not built
        pass

BACKEND = "cython" if _core is not None else "python"
_impl = _core if _core is not None else _fallback


def _pick(impl):
    # impl: None (active backend), a backend name, or a backend module
    if impl is None:
        return _impl
    if isinstance(impl, str):
        try:
            return available_backends()[impl]
        except KeyError:
            raise ValueError(f"kernel backend {impl!r} is not available") from None
    return impl


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pair_scores(Vt, Kt, Qt, Vd, Kd, Qd, kind, cross_t=True, cross_d=True, impl=None):
    impl = _pick(impl)
    return impl.pair_scores(_c(Vt), _c(Kt), _c(Qt), _c(Vd), _c(Kd), _c(Qd), int(kind), bool(cross_t), bool(cross_d))


def hardest_negatives(scores, cat_rows, cat_cols, impl=None):
    impl = _pick(impl)
    return impl.hardest_negatives(
        _c(scores),
        np.ascontiguousarray(cat_rows, dtype=np.int64),
        np.ascontiguousarray(cat_cols, dtype=np.int64),
    )


def best_threshold(scores, labels, impl=None):
    impl = _pick(impl)
    return impl.best_threshold(_c(scores), np.ascontiguousarray(labels, dtype=bool))


def admm_run(M, Atr, A, r, x0, lam, rho, tol, max_iter, impl=None):
    impl = _pick(impl)
    return impl.admm_run(_c(M), _c(Atr), _c(A), _c(r), _c(x0), float(lam), float(rho), float(tol), int(max_iter))


def available_backends():
    out = {"python": _fallback}
    if _core is not None:
        out["cython"] = _core
    return out
