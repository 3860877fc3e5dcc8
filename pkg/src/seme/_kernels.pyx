# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see _kernels_py.py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline bint _span_equal(const cnp.int64_t[:] sc, const cnp.int64_t[:] so,
                             Py_ssize_t a, Py_ssize_t b,
                             const cnp.int64_t[:] pc, const cnp.int64_t[:] po,
                             Py_ssize_t c, Py_ssize_t d) nogil:
    cdef Py_ssize_t s0 = so[a], s1 = so[b], p0 = po[c], p1 = po[d], t
    if s1 - s0 != p1 - p0:
        return False
    for t in range(s1 - s0):
        if sc[s0 + t] != pc[p0 + t]:
            return False
    return True


def align_table(s_codes, s_off, p_codes, p_off, double sub, double split,
                double merge, Py_ssize_t max_span):
    cdef const cnp.int64_t[:] sc = np.ascontiguousarray(s_codes, dtype=np.int64)
    cdef const cnp.int64_t[:] so = np.ascontiguousarray(s_off, dtype=np.int64)
    cdef const cnp.int64_t[:] pc = np.ascontiguousarray(p_codes, dtype=np.int64)
    cdef const cnp.int64_t[:] po = np.ascontiguousarray(p_off, dtype=np.int64)
    cdef Py_ssize_t n = so.shape[0] - 1, m = po.shape[0] - 1
    cdef Py_ssize_t lim = max_span if max_span > 0 else (n if n > m else m)
    cost_arr = np.full((n + 1, m + 1), np.inf, dtype=np.float64)
    choice_arr = np.zeros((n + 1, m + 1), dtype=np.int64)
    cdef double[:, :] cost = cost_arr
    cdef cnp.int64_t[:, :] choice = choice_arr
    cdef Py_ssize_t i, j, k, kmax
    cdef double best, c, rest
    cdef cnp.int64_t arg
    cost[n, m] = 0.0
    with nogil:
        for i in range(n - 1, -1, -1):
            for j in range(m - 1, -1, -1):
                best = cost[i + 1, j + 1]
                if best < INFINITY and not _span_equal(sc, so, i, i + 1, pc, po, j, j + 1):
                    best = best + sub
                arg = 1
                kmax = m - j
                if kmax > lim:
                    kmax = lim
                for k in range(2, kmax + 1):
                    rest = cost[i + 1, j + k]
                    if rest == INFINITY:
                        continue
                    c = rest + split * (k - 1)
                    if not _span_equal(sc, so, i, i + 1, pc, po, j, j + k):
                        c = c + sub
                    if c < best:
                        best = c
                        arg = k
                kmax = n - i
                if kmax > lim:
                    kmax = lim
                for k in range(2, kmax + 1):
                    rest = cost[i + k, j + 1]
                    if rest == INFINITY:
                        continue
                    c = rest + merge * (k - 1)
                    if not _span_equal(sc, so, i, i + k, pc, po, j, j + 1):
                        c = c + sub
                    if c < best:
                        best = c
                        arg = -k
                cost[i, j] = best
                choice[i, j] = arg
    return cost_arr, choice_arr


def levenshtein(str a, str b, Py_ssize_t max_dist=-1):
    if len(a) < len(b):
        a, b = b, a
    cdef Py_ssize_t la = len(a), lb = len(b), i, j, v, row_min
    if max_dist >= 0 and la - lb > max_dist:
        return max_dist + 1
    cdef Py_UCS4[:] ua = np.array([ord(ch) for ch in a], dtype=np.uint32) if la else np.zeros(1, dtype=np.uint32)
    cdef Py_UCS4[:] ub = np.array([ord(ch) for ch in b], dtype=np.uint32) if lb else np.zeros(1, dtype=np.uint32)
    prev_arr = np.arange(lb + 1, dtype=np.intp)
    cur_arr = np.zeros(lb + 1, dtype=np.intp)
    cdef Py_ssize_t[:] prev = prev_arr
    cdef Py_ssize_t[:] cur = cur_arr
    cdef Py_ssize_t[:] tmp
    for i in range(1, la + 1):
        cur[0] = i
        row_min = i
        for j in range(1, lb + 1):
            v = prev[j] + 1
            if cur[j - 1] + 1 < v:
                v = cur[j - 1] + 1
            if prev[j - 1] + (ua[i - 1] != ub[j - 1]) < v:
                v = prev[j - 1] + (ua[i - 1] != ub[j - 1])
            cur[j] = v
            if v < row_min:
                row_min = v
        if max_dist >= 0 and row_min > max_dist:
            return max_dist + 1
        tmp = prev
        prev = cur
        cur = tmp
    v = prev[lb]
    if max_dist >= 0 and v > max_dist:
        return max_dist + 1
    return v


def erase_signs(stack, mask, bint keep_larger):
    cdef const double[:, :] x = np.ascontiguousarray(stack, dtype=np.float64)
    cdef const cnp.uint8_t[:] sel = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t K = x.shape[0], n = x.shape[1], i, k
    out_arr = np.zeros((K, n), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t vote
    cdef double pos, neg, val
    cdef int elected
    with nogil:
        for i in range(n):
            if not sel[i]:
                continue
            vote = 0
            pos = 0.0
            neg = 0.0
            for k in range(K):
                val = x[k, i]
                if val > 0:
                    vote += 1
                    pos += val
                elif val < 0:
                    vote -= 1
                    neg -= val
            if vote > 0:
                elected = 1
            elif vote < 0:
                elected = -1
            elif keep_larger and pos > neg:
                elected = 1
            elif keep_larger and neg > pos:
                elected = -1
            else:
                continue
            for k in range(K):
                val = x[k, i]
                if (elected > 0 and val > 0) or (elected < 0 and val < 0):
                    out[k, i] = val
    return out_arr
