"""Plain-array forms of the basic operations (no graph, no gradients)."""

import numpy as np

from cian.errors import DegenerateInputError, DimensionError


def linear_forward(W, b, x):
    W, b, x = (np.asarray(a, dtype=np.float64) for a in (W, b, x))
    if W.ndim != 2:
        raise DimensionError(f"linear_forward: W must be 2-d, got shape {W.shape}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"linear_forward: b has shape {b.shape}, W has shape {W.shape}")
    if x.shape[-1:] != (W.shape[1],):
        raise DimensionError(f"linear_forward: x has shape {x.shape}, W has shape {W.shape}")
    return x @ W.T + b


def softmax(s):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 0 or s.shape[-1] == 0:
        raise DimensionError("softmax: empty input")
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return np.maximum(e / e.sum(axis=-1, keepdims=True), np.finfo(np.float64).tiny)


def cosine_similarity(u, v) -> float:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"cosine_similarity: shapes {u.shape} and {v.shape} differ")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine_similarity: zero-norm input")
    c = float(u @ v / (nu * nv))
    return min(1.0, max(-1.0, c))
