# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled graph traversal kernel.

Mirrors ``_pyhot.search_layer`` exactly: squared Euclidean distances,
(distance, id) lexicographic ordering, bounded best-first expansion.
"""

import numpy as np


def backend_name():
    return "compiled"


cdef inline bint _before(double d1, long long i1, double d2, long long i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


cdef inline double _dist2(double[:, ::1] vectors, Py_ssize_t row, double[::1] query):
    cdef double s = 0.0
    cdef double t
    cdef Py_ssize_t j
    for j in range(query.shape[0]):
        t = vectors[row, j] - query[j]
        s += t * t
    return s


cdef inline void _min_push(double[::1] hd, long long[::1] hi, Py_ssize_t *size,
                           double d, long long i):
    cdef Py_ssize_t c = size[0]
    cdef Py_ssize_t p
    cdef double td
    cdef long long ti
    hd[c] = d
    hi[c] = i
    size[0] = c + 1
    while c > 0:
        p = (c - 1) >> 1
        if _before(hd[c], hi[c], hd[p], hi[p]):
            td = hd[c]; hd[c] = hd[p]; hd[p] = td
            ti = hi[c]; hi[c] = hi[p]; hi[p] = ti
            c = p
        else:
            break


cdef inline void _min_pop(double[::1] hd, long long[::1] hi, Py_ssize_t *size):
    cdef Py_ssize_t n = size[0] - 1
    cdef Py_ssize_t c = 0
    cdef Py_ssize_t l, r, m
    cdef double td
    cdef long long ti
    hd[0] = hd[n]
    hi[0] = hi[n]
    size[0] = n
    while True:
        l = 2 * c + 1
        r = l + 1
        m = c
        if l < n and _before(hd[l], hi[l], hd[m], hi[m]):
            m = l
        if r < n and _before(hd[r], hi[r], hd[m], hi[m]):
            m = r
        if m == c:
            break
        td = hd[c]; hd[c] = hd[m]; hd[m] = td
        ti = hi[c]; hi[c] = hi[m]; hi[m] = ti
        c = m


cdef inline void _max_push(double[::1] hd, long long[::1] hi, Py_ssize_t *size,
                           double d, long long i):
    # max-heap on (distance, id): root is the worst kept entry
    cdef Py_ssize_t c = size[0]
    cdef Py_ssize_t p
    cdef double td
    cdef long long ti
    hd[c] = d
    hi[c] = i
    size[0] = c + 1
    while c > 0:
        p = (c - 1) >> 1
        if _before(hd[p], hi[p], hd[c], hi[c]):
            td = hd[c]; hd[c] = hd[p]; hd[p] = td
            ti = hi[c]; hi[c] = hi[p]; hi[p] = ti
            c = p
        else:
            break


cdef inline void _max_pop(double[::1] hd, long long[::1] hi, Py_ssize_t *size):
    cdef Py_ssize_t n = size[0] - 1
    cdef Py_ssize_t c = 0
    cdef Py_ssize_t l, r, m
    cdef double td
    cdef long long ti
    hd[0] = hd[n]
    hi[0] = hi[n]
    size[0] = n
    while True:
        l = 2 * c + 1
        r = l + 1
        m = c
        if l < n and _before(hd[m], hi[m], hd[l], hi[l]):
            m = l
        if r < n and _before(hd[m], hi[m], hd[r], hi[r]):
            m = r
        if m == c:
            break
        td = hd[c]; hd[c] = hd[m]; hd[m] = td
        ti = hi[c]; hi[c] = hi[m]; hi[m] = ti
        c = m


def search_layer(double[:, ::1] vectors,
                 int[:, ::1] neighbors,
                 int[::1] counts,
                 double[::1] query,
                 long long[::1] entries,
                 Py_ssize_t ef,
                 long long[::1] stamps,
                 long long stamp,
                 double[::1] cand_d,
                 long long[::1] cand_i):
    """Best-first beam search on one layer; returns (ids, dist2) ascending."""
    res_d_arr = np.empty(ef + 1, dtype=np.float64)
    res_i_arr = np.empty(ef + 1, dtype=np.int64)
    cdef double[::1] res_d = res_d_arr
    cdef long long[::1] res_i = res_i_arr
    cdef Py_ssize_t res_size = 0
    cdef Py_ssize_t cand_size = 0

    cdef Py_ssize_t k, j
    cdef long long node, nb
    cdef double d, dn
    cdef int cnt

    for k in range(entries.shape[0]):
        node = entries[k]
        if stamps[node] == stamp:
            continue
        stamps[node] = stamp
        d = _dist2(vectors, node, query)
        _min_push(cand_d, cand_i, &cand_size, d, node)
        _max_push(res_d, res_i, &res_size, d, node)
        if res_size > ef:
            _max_pop(res_d, res_i, &res_size)

    while cand_size > 0:
        d = cand_d[0]
        node = cand_i[0]
        _min_pop(cand_d, cand_i, &cand_size)
        if res_size >= ef and _before(res_d[0], res_i[0], d, node):
            break
        cnt = counts[node]
        for j in range(cnt):
            nb = neighbors[node, j]
            if stamps[nb] == stamp:
                continue
            stamps[nb] = stamp
            dn = _dist2(vectors, nb, query)
            if res_size >= ef and _before(res_d[0], res_i[0], dn, nb):
                continue
            _min_push(cand_d, cand_i, &cand_size, dn, nb)
            _max_push(res_d, res_i, &res_size, dn, nb)
            if res_size > ef:
                _max_pop(res_d, res_i, &res_size)

    order = np.empty(res_size, dtype=np.int64)
    out_d = np.empty(res_size, dtype=np.float64)
    cdef long long[::1] order_v = order
    cdef double[::1] out_d_v = out_d
    # drain the max-heap from worst to best
    for k in range(res_size - 1, -1, -1):
        order_v[k] = res_i[0]
        out_d_v[k] = res_d[0]
        _max_pop(res_d, res_i, &res_size)
    return order, out_d
