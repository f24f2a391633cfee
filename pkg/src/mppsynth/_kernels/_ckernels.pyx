# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: pair counting, risk scans, truncated-Poisson helpers."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, lgamma, fabs

cnp.import_array()


cdef inline Py_ssize_t _first_geq(const double[::1] h2, double d2) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = h2.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if h2[mid] < d2:
            lo = mid + 1
        else:
            hi = mid
    return lo


def pair_counts(const double[:, ::1] xy, const double[::1] h2):
    cdef Py_ssize_t n = xy.shape[0], m = h2.shape[0], i, j
    cdef double xi, yi, dx, dy, d2, hmax
    cdef cnp.int64_t[::1] diff = np.zeros(m + 1, dtype=np.int64)
    if n < 2 or m == 0:
        return np.zeros(m, dtype=np.int64)
    hmax = h2[m - 1]
    with nogil:
        for i in range(n - 1):
            xi = xy[i, 0]
            yi = xy[i, 1]
            for j in range(i + 1, n):
                dx = xi - xy[j, 0]
                dy = yi - xy[j, 1]
                d2 = dx * dx + dy * dy
                if d2 <= hmax:
                    diff[_first_geq(h2, d2)] += 1
    return np.cumsum(np.asarray(diff)[:m])


def risk_counts(const double[:, ::1] conf_xy, const cnp.int64_t[::1] conf_combo,
                const double[::1] conf_mark, const double[:, ::1] syn_xy,
                const cnp.int64_t[::1] syn_combo, const double[::1] syn_mark,
                double eps_s2, double eps_a):
    cdef Py_ssize_t n = conf_xy.shape[0], ns = syn_xy.shape[0], i, j
    cdef double x0, y0, m0, dx, dy
    cdef cnp.int64_t k0
    cdef bint c, s
    close_arr = np.zeros(n, dtype=np.int64)
    both_arr = np.zeros(n, dtype=np.int64)
    sim_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] close = close_arr, both = both_arr, similar = sim_arr
    with nogil:
        for i in range(n):
            x0 = conf_xy[i, 0]
            y0 = conf_xy[i, 1]
            k0 = conf_combo[i]
            m0 = conf_mark[i]
            for j in range(ns):
                dx = x0 - syn_xy[j, 0]
                dy = y0 - syn_xy[j, 1]
                c = (dx * dx + dy * dy) < eps_s2
                s = syn_combo[j] == k0 and fabs(m0 - syn_mark[j]) <= eps_a
                if c:
                    close[i] += 1
                    if s:
                        both[i] += 1
                if s:
                    similar[i] += 1
    return close_arr, both_arr, sim_arr


cdef inline void _terms(double eta, long lo, long hi, const double[::1] lgam,
                        double* out, double* tmax) noexcept nogil:
    cdef long j
    cdef double t
    tmax[0] = -1e308
    for j in range(lo, hi + 1):
        t = eta * j - lgam[j - lo]
        out[j - lo] = t
        if t > tmax[0]:
            tmax[0] = t


def _lgamma_table(long lo, long hi):
    return np.array([lgamma(j + 1.0) for j in range(lo, hi + 1)], dtype=np.float64)


def trunc_pois_lognorm(const double[::1] eta, long lo, long hi):
    cdef Py_ssize_t n = eta.shape[0], i
    cdef long S = hi - lo + 1, j
    cdef double tmax, acc
    cdef double[::1] lgam = _lgamma_table(lo, hi)
    cdef double[::1] buf = np.empty(S, dtype=np.float64)
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            _terms(eta[i], lo, hi, lgam, &buf[0], &tmax)
            acc = 0.0
            for j in range(S):
                acc += exp(buf[j] - tmax)
            out[i] = tmax + log(acc)
    return out_arr


def trunc_pois_moments(const double[::1] eta, long lo, long hi):
    cdef Py_ssize_t n = eta.shape[0], i
    cdef long S = hi - lo + 1, j
    cdef double tmax, z, m1, m2, w, y
    cdef double[::1] lgam = _lgamma_table(lo, hi)
    cdef double[::1] buf = np.empty(S, dtype=np.float64)
    mean_arr = np.empty(n, dtype=np.float64)
    var_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mean = mean_arr, var = var_arr
    with nogil:
        for i in range(n):
            _terms(eta[i], lo, hi, lgam, &buf[0], &tmax)
            z = 0.0
            m1 = 0.0
            m2 = 0.0
            for j in range(S):
                w = exp(buf[j] - tmax)
                y = <double>(lo + j)
                z += w
                m1 += w * y
                m2 += w * y * y
            m1 /= z
            mean[i] = m1
            var[i] = m2 / z - m1 * m1
            if var[i] < 0.0:
                var[i] = 0.0
    return mean_arr, var_arr


def trunc_pois_sample(const double[::1] eta, const double[::1] u, long lo, long hi):
    cdef Py_ssize_t n = eta.shape[0], i
    cdef long S = hi - lo + 1, j, idx
    cdef double tmax, total, target, acc
    cdef double[::1] lgam = _lgamma_table(lo, hi)
    cdef double[::1] buf = np.empty(S, dtype=np.float64)
    out_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            _terms(eta[i], lo, hi, lgam, &buf[0], &tmax)
            total = 0.0
            for j in range(S):
                buf[j] = exp(buf[j] - tmax)
                total += buf[j]
            target = u[i] * total
            acc = 0.0
            idx = 0
            for j in range(S):
                acc += buf[j]
                if acc < target:
                    idx += 1
                else:
                    break
            if idx > S - 1:
                idx = S - 1
            out[i] = lo + idx
    return out_arr
