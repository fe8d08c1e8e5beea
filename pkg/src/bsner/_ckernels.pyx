# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled span-grid kernels; loop-for-loop twins of ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline bint _valid(Py_ssize_t i, Py_ssize_t j, Py_ssize_t T) nogil:
    return 0 <= i and i <= j and j < T


def smooth_fill(starts, ends, types, sizes, Py_ssize_t T, Py_ssize_t c, double epsilon, bint nominal):
    cdef cnp.int64_t[:] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef cnp.int64_t[:] en = np.ascontiguousarray(ends, dtype=np.int64)
    cdef cnp.int64_t[:] ty = np.ascontiguousarray(types, dtype=np.int64)
    cdef cnp.int64_t[:] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    out = np.zeros((T, T, c), dtype=np.float64)
    cdef double[:, :, ::1] p = out
    cdef Py_ssize_t n = st.shape[0]
    cdef Py_ssize_t e, i, j, t, D, d, i2, j2, r, count, side
    cdef double share, each, s

    for e in range(n):
        i = st[e]; j = en[e]; t = ty[e]; D = sz[e]
        p[i, j, t] += 1.0 - epsilon
        if epsilon == 0.0:
            continue
        share = epsilon / D
        for d in range(1, D + 1):
            count = 0
            for i2 in range(i - d, i + d + 1):
                r = d - (i2 - i if i2 >= i else i - i2)
                if r == 0:
                    count += _valid(i2, j, T)
                else:
                    count += _valid(i2, j - r, T)
                    count += _valid(i2, j + r, T)
            if nominal:
                each = share / (4 * d)
            elif count > 0:
                each = share / count
            else:
                p[i, j, t] += share
                continue
            for i2 in range(i - d, i + d + 1):
                r = d - (i2 - i if i2 >= i else i - i2)
                if r == 0:
                    if _valid(i2, j, T):
                        p[i2, j, t] += each
                else:
                    for side in range(2):
                        j2 = j - r if side == 0 else j + r
                        if _valid(i2, j2, T):
                            p[i2, j2, t] += each

    for i in range(T):
        for j in range(i, T):
            s = 0.0
            for t in range(1, c):
                s += p[i, j, t]
            if s <= 1.0:
                p[i, j, 0] = 1.0 - s
            else:
                for t in range(1, c):
                    p[i, j, t] /= s
                p[i, j, 0] = 0.0
    return out


def candidates(probs, valid, double min_conf):
    cdef double[:, :, :] p = np.asarray(probs, dtype=np.float64)
    cdef cnp.uint8_t[:, :] v = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t T = p.shape[0], c = p.shape[2]
    cdef Py_ssize_t cap = T * (T + 1) // 2
    s_arr = np.empty(cap, dtype=np.int64)
    e_arr = np.empty(cap, dtype=np.int64)
    t_arr = np.empty(cap, dtype=np.int64)
    c_arr = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[:] so = s_arr, eo = e_arr, to = t_arr
    cdef double[:] co = c_arr
    cdef Py_ssize_t i, j, t, best, n = 0
    cdef double best_p
    for i in range(T):
        for j in range(i, T):
            if not v[i, j]:
                continue
            best = 0
            best_p = p[i, j, 0]
            for t in range(1, c):
                if p[i, j, t] > best_p:
                    best = t
                    best_p = p[i, j, t]
            if best != 0 and best_p >= min_conf:
                so[n] = i; eo[n] = j; to[n] = best; co[n] = best_p
                n += 1
    return s_arr[:n].copy(), e_arr[:n].copy(), t_arr[:n].copy(), c_arr[:n].copy()


def greedy(starts, ends, bint nested):
    cdef cnp.int64_t[:] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef cnp.int64_t[:] en = np.ascontiguousarray(ends, dtype=np.int64)
    cdef Py_ssize_t n = st.shape[0]
    kept_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[:] kept = kept_arr
    cdef Py_ssize_t k, m, nk = 0
    cdef cnp.int64_t s, e, s2, e2
    cdef bint ok
    for k in range(n):
        s = st[k]; e = en[k]
        ok = True
        for m in range(nk):
            s2 = st[kept[m]]; e2 = en[kept[m]]
            if s <= e2 and s2 <= e:
                if not nested or not ((s <= s2 and e2 <= e) or (s2 <= s and e <= e2)):
                    ok = False
                    break
        if ok:
            kept[nk] = k
            nk += 1
    return kept_arr[:nk].copy()
