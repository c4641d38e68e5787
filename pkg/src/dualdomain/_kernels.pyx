# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused batch inference, patch gather/scatter,
and the aligned-block matcher.  Mirrors _kernels_py exactly."""

import numpy as np

from libc.math cimport fabs
from libc.stdint cimport int64_t
from scipy.linalg.cython_blas cimport dgemm

NAME = "compiled"


cdef void _mm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    """c (n, m) = a (n, k) @ b (m, k).T for row-major inputs."""
    cdef int n = <int> a.shape[0]
    cdef int k = <int> a.shape[1]
    cdef int m = <int> b.shape[0]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char trans_t = b"T"
    cdef char trans_n = b"N"
    if n == 0 or m == 0 or k == 0:
        return
    # Row-major C = A B^T seen column-major is C^T = B A^T.
    dgemm(&trans_t, &trans_n, &m, &n, &k, &one, &b[0, 0], &k, &a[0, 0], &k,
          &zero, &c[0, 0], &m)


cdef void _shrink_rows(double[:, ::1] u, double[::1] t) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v, th
    for i in range(u.shape[0]):
        for j in range(u.shape[1]):
            v = u[i, j]
            th = t[j]
            if v > th:
                u[i, j] = v - th
            elif v < -th:
                u[i, j] = v + th
            else:
                u[i, j] = 0.0


def forward_batch(a1, s1, th1, a2, s2, th2, tf, ti, x, lo=None, hi=None):
    """Fused two-stage inference over a batch of mean-shifted patches."""
    cdef double[:, ::1] a1v = np.ascontiguousarray(a1)
    cdef double[:, ::1] s1v = np.ascontiguousarray(s1)
    cdef double[::1] th1v = np.ascontiguousarray(th1)
    cdef double[:, ::1] a2v = np.ascontiguousarray(a2)
    cdef double[:, ::1] s2v = np.ascontiguousarray(s2)
    cdef double[::1] th2v = np.ascontiguousarray(th2)
    cdef double[:, ::1] tfv = np.ascontiguousarray(tf)
    cdef double[:, ::1] tiv = np.ascontiguousarray(ti)
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)

    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t m = tfv.shape[0]
    cdef Py_ssize_t p1 = a1v.shape[0]
    cdef Py_ssize_t p2 = a2v.shape[0]

    y = np.empty((n, m))
    u1 = np.empty((n, p1))
    z = np.empty((n, m))
    w = np.empty((n, m))
    u2 = np.empty((n, p2))
    out = np.empty((n, m))
    cdef double[:, ::1] yv = y
    cdef double[:, ::1] u1v = u1
    cdef double[:, ::1] zv = z
    cdef double[:, ::1] wv = w
    cdef double[:, ::1] u2v = u2
    cdef double[:, ::1] outv = out

    cdef bint clamp = lo is not None
    cdef double[:, ::1] lov
    cdef double[:, ::1] hiv
    cdef Py_ssize_t i, j
    cdef double v

    _mm_nt(xv, tfv, yv)
    _mm_nt(yv, a1v, u1v)
    _shrink_rows(u1v, th1v)
    _mm_nt(u1v, s1v, zv)
    if clamp:
        lov = np.ascontiguousarray(lo, dtype=np.float64)
        hiv = np.ascontiguousarray(hi, dtype=np.float64)
        with nogil:
            for i in range(n):
                for j in range(m):
                    v = zv[i, j]
                    if v < lov[i, j]:
                        zv[i, j] = lov[i, j]
                    elif v > hiv[i, j]:
                        zv[i, j] = hiv[i, j]
    _mm_nt(zv, tiv, wv)
    _mm_nt(wv, a2v, u2v)
    _shrink_rows(u2v, th2v)
    _mm_nt(u2v, s2v, outv)
    return out


def extract_at(img, origins, double shift):
    """Gather 8x8 patches at (row, col) origins into (n, 64) rows."""
    cdef double[:, ::1] imgv = np.ascontiguousarray(img, dtype=np.float64)
    cdef int64_t[:, ::1] org = np.ascontiguousarray(origins, dtype=np.int64)
    cdef Py_ssize_t n = org.shape[0]
    out = np.empty((n, 64))
    cdef double[:, ::1] outv = out
    cdef Py_ssize_t i, r, c
    cdef int64_t r0, c0
    with nogil:
        for i in range(n):
            r0 = org[i, 0]
            c0 = org[i, 1]
            for r in range(8):
                for c in range(8):
                    outv[i, r * 8 + c] = imgv[r0 + r, c0 + c] - shift
    return out


def accumulate_at(values, origins, Py_ssize_t height, Py_ssize_t width):
    """Scatter-add patch values; returns (sum, count) images."""
    cdef double[:, ::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef int64_t[:, ::1] org = np.ascontiguousarray(origins, dtype=np.int64)
    acc = np.zeros((height, width))
    cnt = np.zeros((height, width))
    cdef double[:, ::1] accv = acc
    cdef double[:, ::1] cntv = cnt
    cdef Py_ssize_t i, r, c
    cdef int64_t r0, c0
    with nogil:
        for i in range(org.shape[0]):
            r0 = org[i, 0]
            c0 = org[i, 1]
            for r in range(8):
                for c in range(8):
                    accv[r0 + r, c0 + c] += vals[i, r * 8 + c]
                    cntv[r0 + r, c0 + c] += 1.0
    return acc, cnt


def best_match_blocks(img, origins):
    """Nearest aligned coding block per origin (see the pure twin)."""
    cdef double[:, ::1] imgv = np.ascontiguousarray(img, dtype=np.float64)
    cdef int64_t[:, ::1] org = np.ascontiguousarray(origins, dtype=np.int64)
    cdef Py_ssize_t height = imgv.shape[0]
    cdef Py_ssize_t width = imgv.shape[1]
    cdef Py_ssize_t n = org.shape[0]
    out = np.empty((n, 2), dtype=np.int64)
    cdef int64_t[:, ::1] outv = out
    cdef Py_ssize_t i, r, c, br, bc, rr, cc, r_lo, r_hi, c_lo, c_hi
    cdef double best, dist, diff
    cdef int64_t best_r, best_c
    with nogil:
        for i in range(n):
            r = org[i, 0]
            c = org[i, 1]
            if r % 8 == 0 and c % 8 == 0:
                outv[i, 0] = r // 8
                outv[i, 1] = c // 8
                continue
            r_lo = ((r - 8 + 7) // 8) * 8 if r - 8 > 0 else 0
            c_lo = ((c - 8 + 7) // 8) * 8 if c - 8 > 0 else 0
            r_hi = r + 7 if r + 7 < height - 8 else height - 8
            c_hi = c + 7 if c + 7 < width - 8 else width - 8
            best = -1.0
            best_r = 0
            best_c = 0
            br = r_lo
            while br <= r_hi:
                bc = c_lo
                while bc <= c_hi:
                    dist = 0.0
                    for rr in range(8):
                        for cc in range(8):
                            diff = imgv[r + rr, c + cc] - imgv[br + rr, bc + cc]
                            dist += diff * diff
                    if best < 0.0 or dist < best:
                        best = dist
                        best_r = br // 8
                        best_c = bc // 8
                    bc += 8
                br += 8
            outv[i, 0] = best_r
            outv[i, 1] = best_c
    return out
