# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors ``_fallback.py`` operation for operation."""
from libc.math cimport sqrt, fabs, INFINITY
from libc.stdlib cimport malloc, free


def surrogate_sum(scores, order):
    cdef Py_ssize_t n = len(order)
    cdef double[::1] s = _as_doubles(scores)
    cdef double total = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        total += <double>k * s[<Py_ssize_t>order[k]]
    return total


cdef double[::1] _as_doubles(obj):
    cdef Py_ssize_t n = len(obj)
    cdef double[::1] out
    try:
        out = obj
        return out
    except (TypeError, ValueError):
        pass
    import array
    buf = array.array("d", [float(v) for v in obj])
    out = buf
    return out


cdef bint _next_permutation(int* a, int n) nogil:
    cdef int i = n - 2
    cdef int j, tmp
    while i >= 0 and a[i] >= a[i + 1]:
        i -= 1
    if i < 0:
        return False
    j = n - 1
    while a[j] <= a[i]:
        j -= 1
    tmp = a[i]; a[i] = a[j]; a[j] = tmp
    i += 1
    j = n - 1
    while i < j:
        tmp = a[i]; a[i] = a[j]; a[j] = tmp
        i += 1
        j -= 1
    return True


def min_surrogate_sum(scores):
    cdef double[::1] s = _as_doubles(scores)
    cdef int n = <int>s.shape[0]
    cdef int* cur = <int*>malloc(max(n, 1) * sizeof(int))
    cdef int* best_order = <int*>malloc(max(n, 1) * sizeof(int))
    cdef double best = INFINITY
    cdef double total
    cdef int k
    if cur == NULL or best_order == NULL:
        free(cur)
        free(best_order)
        raise MemoryError()
    try:
        for k in range(n):
            cur[k] = k
            best_order[k] = k
        with nogil:
            while True:
                total = 0.0
                for k in range(n):
                    total += <double>k * s[cur[k]]
                if total < best:
                    best = total
                    for k in range(n):
                        best_order[k] = cur[k]
                if not _next_permutation(cur, n):
                    break
        return tuple(best_order[k] for k in range(n)), best
    finally:
        free(cur)
        free(best_order)


def top_eigen_gram(w, x0, double rtol, int max_iter):
    cdef Py_ssize_t rows = len(w)
    cdef Py_ssize_t cols = len(w[0])
    cdef double* wm = <double*>malloc(rows * cols * sizeof(double))
    cdef double* gram = <double*>malloc(cols * cols * sizeof(double))
    cdef double* x = <double*>malloc(cols * sizeof(double))
    cdef double* y = <double*>malloc(cols * sizeof(double))
    cdef Py_ssize_t a, b, r
    cdef int it
    cdef double acc, norm, lam = 0.0, lam_prev = 0.0, ny
    if wm == NULL or gram == NULL or x == NULL or y == NULL:
        free(wm); free(gram); free(x); free(y)
        raise MemoryError()
    try:
        for r in range(rows):
            row = w[r]
            for a in range(cols):
                wm[r * cols + a] = row[a]
        for a in range(cols):
            x[a] = x0[a]
        with nogil:
            for a in range(cols):
                for b in range(cols):
                    acc = 0.0
                    for r in range(rows):
                        acc += wm[r * cols + a] * wm[r * cols + b]
                    gram[a * cols + b] = acc
            norm = 0.0
            for a in range(cols):
                norm += x[a] * x[a]
            norm = sqrt(norm)
            for a in range(cols):
                x[a] = x[a] / norm
            for it in range(max_iter):
                for a in range(cols):
                    acc = 0.0
                    for b in range(cols):
                        acc += gram[a * cols + b] * x[b]
                    y[a] = acc
                lam = 0.0
                ny = 0.0
                for a in range(cols):
                    lam += x[a] * y[a]
                    ny += y[a] * y[a]
                ny = sqrt(ny)
                if ny == 0.0:
                    lam = 0.0
                    break
                for a in range(cols):
                    x[a] = y[a] / ny
                if it > 0 and fabs(lam - lam_prev) <= rtol * fabs(lam):
                    break
                lam_prev = lam
        return lam
    finally:
        free(wm); free(gram); free(x); free(y)
