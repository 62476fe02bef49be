# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-element kernels.

Element contributions are computed in parallel into a buffer and scattered
into the global vector in element order, so results do not depend on the
thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport log1p, fabs, fmax, fmin

cnp.import_array()

cdef double EQUAL_TOL = 1e-12


cdef inline double _clip(double s, double lo, double hi) noexcept nogil:
    return fmin(fmax(s, lo), hi)


cdef inline double _theta_tilde(double a0, double aj, double d, double L) noexcept nogil:
    cdef double lo = fmin(a0, aj), hi = fmax(a0, aj)
    cdef double diff = hi - lo
    cdef double scale = fmax(1.0, fmax(fabs(a0), fabs(aj)))
    cdef double inc, clo, chi, q
    if diff <= EQUAL_TOL * scale:
        return _clip(aj, d, L)
    inc = (fmin(hi, d) - fmin(lo, d)) / d + (fmax(hi, L) - fmax(lo, L)) / L
    clo = _clip(lo, d, L)
    chi = _clip(hi, d, L)
    inc = inc + log1p((chi - clo) / clo)
    q = diff / inc
    return _clip(q, d, L)


def element_convection(const long[:, ::1] tri, const double[:, :, ::1] B,
                       const double[:, :, ::1] G, const double[::1] area,
                       const double[:, :, ::1] AK, const double[::1] rho,
                       const double[::1] c, double delta, double L, int num_threads=1):
    cdef Py_ssize_t ne = tri.shape[0], k
    cdef double[:, ::1] out = np.empty((ne, 3))
    cdef long i0, i1, i2
    cdef double gx, gy, fx, fy, v0, v1
    for k in prange(ne, nogil=True, num_threads=max(num_threads, 1), schedule="static"):
        i0 = tri[k, 0]
        i1 = tri[k, 1]
        i2 = tri[k, 2]
        gx = G[k, 0, 0] * c[i0] + G[k, 1, 0] * c[i1] + G[k, 2, 0] * c[i2]
        gy = G[k, 0, 1] * c[i0] + G[k, 1, 1] * c[i1] + G[k, 2, 1] * c[i2]
        fx = AK[k, 0, 0] * gx + AK[k, 0, 1] * gy
        fy = AK[k, 1, 0] * gx + AK[k, 1, 1] * gy
        v0 = (B[k, 0, 0] * fx + B[k, 1, 0] * fy) * _theta_tilde(rho[i0], rho[i1], delta, L)
        v1 = (B[k, 0, 1] * fx + B[k, 1, 1] * fy) * _theta_tilde(rho[i0], rho[i2], delta, L)
        fx = G[k, 1, 0] * v0 + G[k, 2, 0] * v1
        fy = G[k, 1, 1] * v0 + G[k, 2, 1] * v1
        out[k, 0] = area[k] * (G[k, 0, 0] * fx + G[k, 0, 1] * fy)
        out[k, 1] = area[k] * (G[k, 1, 0] * fx + G[k, 1, 1] * fy)
        out[k, 2] = area[k] * (G[k, 2, 0] * fx + G[k, 2, 1] * fy)
    return np.asarray(out)


def convection_rhs(const long[:, ::1] tri, const double[:, :, ::1] B,
                   const double[:, :, ::1] G, const double[::1] area,
                   const double[:, :, ::1] AK, const double[::1] rho,
                   const double[::1] c, double delta, double L, int num_threads=1):
    cdef double[:, ::1] contrib = element_convection(tri, B, G, area, AK, rho, c,
                                                     delta, L, num_threads)
    cdef Py_ssize_t n = rho.shape[0], ne = tri.shape[0], k
    cdef int j
    cdef double[::1] out = np.zeros(n)
    for k in range(ne):
        for j in range(3):
            out[tri[k, j]] += contrib[k, j]
    return np.asarray(out)
