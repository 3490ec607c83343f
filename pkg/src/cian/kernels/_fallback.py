"""Pure numpy implementations of the hot kernels.

These define the reference behaviour; ``_core.pyx`` must agree with them to
rounding.  Package-op codes: 0 = dot, 1 = gaussian, 2 = kernel-gaussian (tanh).
"""

import numpy as np

_CHUNK_ELEMS = 1 << 21


def _package(s_k, s_q, kind):
    if kind == 0:
        return s_k * s_q
    if kind == 1:
        return np.exp(s_k * s_q)
    return np.exp(np.tanh(s_k) * np.tanh(s_q))


def _attend_rows(V, K, Q, kind):
    # V, K, Q broadcast to (..., dim); coordinate-wise attention
    s = _package(K, Q, kind) / np.sqrt(K.shape[-1])
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True) * V


def pair_scores(Vt, Kt, Qt, Vd, Kd, Qd, kind, cross_t, cross_d):
    """Cosine score for every (transaction i, text j) pair.

    Transaction side of pair (i, j): values/keys ``Vt[i], Kt[i]`` attended by
    the query ``Qt[j]`` (built from text j).  Text side: ``Vd[j], Kd[j]``
    attended by ``Qd[i]``.  A branch without a cross block uses its ``V`` row
    directly as the embedding.
    """
    Vt, Kt, Qt, Vd, Kd, Qd = (np.asarray(a, dtype=np.float64) for a in (Vt, Kt, Qt, Vd, Kd, Qd))
    n_t, dim = Vt.shape
    n_d = Vd.shape[0]
    out = np.empty((n_t, n_d))
    step = max(1, _CHUNK_ELEMS // max(1, n_d * dim))
    for lo in range(0, n_t, step):
        hi = min(n_t, lo + step)
        if cross_t:
            et = _attend_rows(Vt[lo:hi, None, :], Kt[lo:hi, None, :], Qt[None, :, :], kind)
        else:
            et = np.broadcast_to(Vt[lo:hi, None, :], (hi - lo, n_d, dim))
        if cross_d:
            ed = _attend_rows(Vd[None, :, :], Kd[None, :, :], Qd[lo:hi, None, :], kind)
        else:
            ed = np.broadcast_to(Vd[None, :, :], (hi - lo, n_d, dim))
        num = (et * ed).sum(axis=-1)
        den = np.sqrt((et * et).sum(axis=-1)) * np.sqrt((ed * ed).sum(axis=-1))
        out[lo:hi] = num / den
    return out


def hardest_negatives(scores, cat_rows, cat_cols):
    """Per row, index of the highest-scoring column of a different category.

    Ties go to the lowest column index; rows with no candidate get -1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    cat_rows = np.asarray(cat_rows)
    cat_cols = np.asarray(cat_cols)
    allowed = cat_rows[:, None] != cat_cols[None, :]
    masked = np.where(allowed, scores, -np.inf)
    idx = np.argmax(masked, axis=1).astype(np.int64)
    idx[~allowed.any(axis=1)] = -1
    return idx


def best_threshold(scores, labels):
    """F1-maximising threshold over midpoints of adjacent distinct scores.

    Prediction rule is ``score >= threshold``; among equal F1 the lower
    threshold wins.  Returns ``(threshold, f1)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    n_pos = int(y.sum())
    tp = np.cumsum(y)
    k = np.arange(1, s.size + 1)
    # a cut after position i is only valid where the next score is strictly lower
    valid = np.flatnonzero(s[:-1] > s[1:])
    if valid.size == 0:
        tp_all = n_pos
        return float(s[-1]), 2.0 * tp_all / (tp_all + s.size)
    tp_v = tp[valid]
    f1 = 2.0 * tp_v / (k[valid] + n_pos)
    best = f1.max()
    # descending scores -> the last maximal cut has the lowest threshold
    i = valid[np.flatnonzero(f1 == best)[-1]]
    return float((s[i] + s[i + 1]) / 2.0), float(best)


def _soft(x, kappa):
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def _sphere_point(z, w):
    # z / ||z||, or its limit sign(w_k) e_k (k = argmax |w|) once every entry is thresholded away
    nz = np.sqrt(z @ z)
    if nz > 0.0:
        return z / nz
    k = int(np.argmax(np.abs(w)))
    out = np.zeros_like(z)
    out[k] = 1.0 if w[k] >= 0 else -1.0
    return out


def _objective(A, r, x, lam):
    res = A @ x - r
    return float(res @ res + lam * np.abs(x).sum())


def admm_run(M, Atr, A, r, x0, lam, rho, tol, max_iter):
    """Sphere-constrained L1 ADMM iterations.

    ``M`` is the inverse of ``A^T A + (rho/2) I``.  Returns
    ``(best_mask, best_objective, iterations, converged)`` where candidates
    are the split variable projected onto the unit sphere.
    """
    x = np.array(x0, dtype=np.float64)
    z = x.copy()
    u = np.zeros_like(x)
    best = x.copy()
    best_obj = _objective(A, r, best, lam)
    half_rho = rho / 2.0
    kappa = lam / rho
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        xn = M @ (Atr + half_rho * (z - u))
        nrm = np.sqrt(xn @ xn)
        if nrm > 0.0:
            x = xn / nrm
        z_old = z
        w = x + u
        z = _soft(w, kappa)
        u = u + x - z
        primal = np.sqrt(((x - z) ** 2).sum())
        dual = rho * np.sqrt(((z - z_old) ** 2).sum())
        cand = _sphere_point(z, w)
        obj = _objective(A, r, cand, lam)
        if obj < best_obj:
            best_obj = obj
            best = cand.copy()
        if max(primal, dual) < tol:
            converged = True
            break
    return best, best_obj, it, converged
