# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: im2col/col2im for valid convolution and strapdown integration.

Signatures and results match ``_kernels_py`` exactly; see that module for the contracts.
"""
import numpy as np
from libc.math cimport cos, sin, fmod, M_PI


def unfold(const double[:, :, :, ::1] x, Py_ssize_t fh, Py_ssize_t fw):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t oh = H - fh + 1, ow = W - fw + 1
    cdef Py_ssize_t n, i, j, c, a, b, k
    out = np.empty((N, oh, ow, C * fh * fw), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for n in range(N):
            for c in range(C):
                for a in range(fh):
                    for b in range(fw):
                        k = (c * fh + a) * fw + b
                        for i in range(oh):
                            for j in range(ow):
                                o[n, i, j, k] = x[n, c, i + a, j + b]
    return out


def fold(const double[:, :, :, ::1] cols, Py_ssize_t C, Py_ssize_t fh, Py_ssize_t fw):
    cdef Py_ssize_t N = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t H = oh + fh - 1, W = ow + fw - 1
    cdef Py_ssize_t n, i, j, c, a, b, k
    out = np.zeros((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for n in range(N):
            for c in range(C):
                for a in range(fh):
                    for b in range(fw):
                        k = (c * fh + a) * fw + b
                        for i in range(oh):
                            for j in range(ow):
                                o[n, c, i + a, j + b] += cols[n, i, j, k]
    return out


cdef inline double _wrap(double a) nogil:
    a = fmod(a + M_PI, 2.0 * M_PI)
    if a < 0:
        a += 2.0 * M_PI
    return a - M_PI


def strapdown(const double[::1] t, const double[:, ::1] acc, const double[::1] gyro_z,
              const double[::1] mag_heading, double gravity, double gain, double psi0):
    cdef Py_ssize_t n = t.shape[0], k, ax
    pos_arr = np.zeros((n, 3), dtype=np.float64)
    psi_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] pos = pos_arr
    cdef double[::1] psi_out = psi_arr
    cdef double psi = psi0, dt, c, s
    cdef double aw_prev[3]
    cdef double aw[3]
    cdef double vel[3]
    cdef double vnew
    if n == 0:
        return pos_arr, psi_arr
    psi_out[0] = psi
    c = cos(psi)
    s = sin(psi)
    aw_prev[0] = c * acc[0, 0] - s * acc[0, 1]
    aw_prev[1] = s * acc[0, 0] + c * acc[0, 1]
    aw_prev[2] = acc[0, 2] - gravity
    vel[0] = 0.0
    vel[1] = 0.0
    vel[2] = 0.0
    with nogil:
        for k in range(1, n):
            dt = t[k] - t[k - 1]
            psi = psi + 0.5 * (gyro_z[k - 1] + gyro_z[k]) * dt
            psi = psi + gain * _wrap(mag_heading[k] - psi)
            psi_out[k] = psi
            c = cos(psi)
            s = sin(psi)
            aw[0] = c * acc[k, 0] - s * acc[k, 1]
            aw[1] = s * acc[k, 0] + c * acc[k, 1]
            aw[2] = acc[k, 2] - gravity
            for ax in range(3):
                vnew = vel[ax] + 0.5 * (aw_prev[ax] + aw[ax]) * dt
                pos[k, ax] = pos[k - 1, ax] + 0.5 * (vel[ax] + vnew) * dt
                vel[ax] = vnew
                aw_prev[ax] = aw[ax]
    return pos_arr, psi_arr
