# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_fallback.py`` (same signatures)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh, fabs, INFINITY

cnp.import_array()


cdef inline double _package(double k, double q, int kind) noexcept nogil:
    if kind == 0:
        return k * q
    if kind == 1:
        return exp(k * q)
    return exp(tanh(k) * tanh(q))


cdef void _attend(const double[:] v, const double[:] k, const double[:] q, int kind,
                  double scale, double[:] s, double[:] out) noexcept nogil:
    cdef Py_ssize_t c, dim = v.shape[0]
    cdef double m = -INFINITY, tot = 0.0
    for c in range(dim):
        s[c] = _package(k[c], q[c], kind) * scale
        if s[c] > m:
            m = s[c]
    for c in range(dim):
        s[c] = exp(s[c] - m)
        tot += s[c]
    for c in range(dim):
        out[c] = s[c] / tot * v[c]


def pair_scores(const double[:, ::1] Vt, const double[:, ::1] Kt, const double[:, ::1] Qt,
                const double[:, ::1] Vd, const double[:, ::1] Kd, const double[:, ::1] Qd,
                int kind, bint cross_t, bint cross_d):
    cdef Py_ssize_t n_t = Vt.shape[0], n_d = Vd.shape[0], dim = Vt.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double scale = 1.0 / sqrt(<double>dim)
    cdef double num, nt, nd
    out_arr = np.empty((n_t, n_d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] s = np.empty(dim)
    cdef double[::1] et = np.empty(dim)
    cdef double[::1] ed = np.empty(dim)
    with nogil:
        for i in range(n_t):
            for j in range(n_d):
                if cross_t:
                    _attend(Vt[i], Kt[i], Qt[j], kind, scale, s, et)
                else:
                    et[:] = Vt[i]
                if cross_d:
                    _attend(Vd[j], Kd[j], Qd[i], kind, scale, s, ed)
                else:
                    ed[:] = Vd[j]
                num = 0.0
                nt = 0.0
                nd = 0.0
                for c in range(dim):
                    num += et[c] * ed[c]
                    nt += et[c] * et[c]
                    nd += ed[c] * ed[c]
                out[i, j] = num / (sqrt(nt) * sqrt(nd))
    return out_arr


def hardest_negatives(const double[:, :] scores, const long[:] cat_rows, const long[:] cat_cols):
    cdef Py_ssize_t n = scores.shape[0], m = scores.shape[1], i, j
    cdef long best
    cdef double best_s
    idx_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_arr
    with nogil:
        for i in range(n):
            best = -1
            best_s = -INFINITY
            for j in range(m):
                if cat_cols[j] != cat_rows[i] and (best < 0 or scores[i, j] > best_s):
                    best = j
                    best_s = scores[i, j]
            idx[i] = best
    return idx_arr


def best_threshold(scores, labels):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] lab = np.ascontiguousarray(labels, dtype=np.uint8)
    order = np.argsort(-sc, kind="stable")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = sc[order]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] y = lab[order]
    cdef Py_ssize_t n = s.shape[0], i, best_i = -1
    cdef long n_pos = 0, tp = 0
    cdef double f1, best_f1 = -1.0
    for i in range(n):
        n_pos += y[i] != 0
    for i in range(n - 1):
        tp += y[i] != 0
        if s[i] > s[i + 1]:
            f1 = 2.0 * tp / (i + 1 + n_pos)
            if f1 >= best_f1:
                best_f1 = f1
                best_i = i
    if best_i < 0:
        return float(s[n - 1]), 2.0 * n_pos / (n_pos + n)
    return float((s[best_i] + s[best_i + 1]) / 2.0), float(best_f1)


cdef double _objective(const double[:, ::1] A, const double[::1] r, const double[::1] x,
                       double lam) noexcept nogil:
    cdef Py_ssize_t i, j, m = A.shape[0], n = A.shape[1]
    cdef double acc, tot = 0.0, l1 = 0.0
    for i in range(m):
        acc = -r[i]
        for j in range(n):
            acc += A[i, j] * x[j]
        tot += acc * acc
    for j in range(n):
        l1 += fabs(x[j])
    return tot + lam * l1


def admm_run(const double[:, ::1] M, const double[::1] Atr, const double[:, ::1] A,
             const double[::1] r, x0, double lam, double rho, double tol, long max_iter):
    cdef Py_ssize_t n = M.shape[0], i, j
    x_arr = np.array(x0, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] z = x_arr.copy()
    cdef double[::1] z_old = np.empty(n)
    cdef double[::1] u = np.zeros(n)
    cdef double[::1] rhs = np.empty(n)
    cdef double[::1] xn = np.empty(n)
    cdef double[::1] cand = np.empty(n)
    cdef double[::1] wv = np.empty(n)
    cdef Py_ssize_t kmax
    best_arr = x_arr.copy()
    cdef double[::1] best = best_arr
    cdef double half_rho = rho / 2.0, kappa = lam / rho
    cdef double best_obj, obj, nrm, nz, primal, dual, w, d
    cdef long it = 0
    cdef bint converged = False
    with nogil:
        best_obj = _objective(A, r, best, lam)
        while it < max_iter:
            it += 1
            for i in range(n):
                rhs[i] = Atr[i] + half_rho * (z[i] - u[i])
            nrm = 0.0
            for i in range(n):
                w = 0.0
                for j in range(n):
                    w += M[i, j] * rhs[j]
                xn[i] = w
                nrm += w * w
            nrm = sqrt(nrm)
            if nrm > 0.0:
                for i in range(n):
                    x[i] = xn[i] / nrm
            primal = 0.0
            dual = 0.0
            nz = 0.0
            for i in range(n):
                z_old[i] = z[i]
                w = x[i] + u[i]
                wv[i] = w
                if w > kappa:
                    z[i] = w - kappa
                elif w < -kappa:
                    z[i] = w + kappa
                else:
                    z[i] = 0.0
                u[i] = u[i] + x[i] - z[i]
                d = x[i] - z[i]
                primal += d * d
                d = z[i] - z_old[i]
                dual += d * d
                nz += z[i] * z[i]
            primal = sqrt(primal)
            dual = rho * sqrt(dual)
            nz = sqrt(nz)
            if nz > 0.0:
                for i in range(n):
                    cand[i] = z[i] / nz
            else:
                # limit of z / ||z|| as the threshold swallows the last entry
                kmax = 0
                for i in range(n):
                    cand[i] = 0.0
                    if fabs(wv[i]) > fabs(wv[kmax]):
                        kmax = i
                cand[kmax] = 1.0 if wv[kmax] >= 0 else -1.0
            obj = _objective(A, r, cand, lam)
            if obj < best_obj:
                best_obj = obj
                best[:] = cand
            if (primal if primal > dual else dual) < tol:
                converged = True
                break
    return best_arr, best_obj, it, converged
