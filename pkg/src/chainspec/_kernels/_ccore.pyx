# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Frenet recursion, its adjoint, and the Gaussian projection.

Mirrors ``_pycore`` function for function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, exp

cnp.import_array()


cdef inline void _rot3(double th, double ps, double[:, ::1] R) noexcept nogil:
    cdef double ct = cos(th), st = sin(th), cp = cos(ps), sp = sin(ps)
    R[0, 0] = cp * ct
    R[0, 1] = cp * st
    R[0, 2] = -sp
    R[1, 0] = -st
    R[1, 1] = ct
    R[1, 2] = 0.0
    R[2, 0] = sp * ct
    R[2, 1] = sp * st
    R[2, 2] = cp


cdef inline void _rot2(double th, double[:, ::1] R) noexcept nogil:
    cdef double ct = cos(th), st = sin(th)
    R[0, 0] = ct
    R[0, 1] = -st
    R[1, 0] = st
    R[1, 1] = ct


def rotations(theta, psi=None):
    th = np.ascontiguousarray(theta, dtype=np.float64)
    shape = th.shape
    cdef const double[::1] tf = th.reshape(-1)
    cdef Py_ssize_t n = tf.shape[0], i
    cdef double[:, :, ::1] out
    cdef const double[::1] pf
    if psi is None:
        res = np.empty((n, 2, 2))
        out = res
        for i in range(n):
            _rot2(tf[i], out[i])
        return res.reshape(shape + (2, 2))
    pf = np.ascontiguousarray(psi, dtype=np.float64).reshape(-1)
    res = np.empty((n, 3, 3))
    out = res
    for i in range(n):
        _rot3(tf[i], pf[i], out[i])
    return res.reshape(shape + (3, 3))


def synthesize(theta, psi, zhat, Fhat, Py_ssize_t j0, double delta):
    cdef const double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] ps
    cdef const double[:, ::1] zh = np.ascontiguousarray(zhat, dtype=np.float64)
    cdef const double[:, :, ::1] Fh = np.ascontiguousarray(Fhat, dtype=np.float64)
    cdef Py_ssize_t P = th.shape[0], M = th.shape[1], m = M + 2
    cdef Py_ssize_t D = zh.shape[1]
    cdef bint planar = psi is None
    ps = th if planar else np.ascontiguousarray(psi, dtype=np.float64)
    z_arr = np.empty((P, m, D))
    F_arr = np.empty((P, m - 1, D, D))
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, :, ::1] F = F_arr
    cdef double[:, ::1] R = np.empty((D, D))
    cdef Py_ssize_t p, k, a, b, c
    cdef double s
    with nogil:
        for p in range(P):
            for a in range(D):
                z[p, j0, a] = zh[p, a]
                for b in range(D):
                    F[p, j0, a, b] = Fh[p, a, b]
            for k in range(j0, m - 2):
                if planar:
                    _rot2(th[p, k], R)
                else:
                    _rot3(th[p, k], ps[p, k], R)
                for a in range(D):
                    for b in range(D):
                        s = 0.0
                        for c in range(D):
                            s = s + R[a, c] * F[p, k, c, b]
                        F[p, k + 1, a, b] = s
            for k in range(j0 - 1, -1, -1):
                if planar:
                    _rot2(th[p, k], R)
                else:
                    _rot3(th[p, k], ps[p, k], R)
                for a in range(D):
                    for b in range(D):
                        s = 0.0
                        for c in range(D):
                            s = s + R[c, a] * F[p, k + 1, c, b]
                        F[p, k, a, b] = s
            for k in range(j0, m - 1):
                for a in range(D):
                    z[p, k + 1, a] = z[p, k, a] + delta * F[p, k, D - 1, a]
            for k in range(j0 - 1, -1, -1):
                for a in range(D):
                    z[p, k, a] = z[p, k + 1, a] - delta * F[p, k, D - 1, a]
    return z_arr, F_arr


def frenet_backward(theta, psi, F_in, Py_ssize_t j0, double delta, gz_in):
    cdef const double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] ps
    cdef const double[:, :, :, ::1] F = np.ascontiguousarray(F_in, dtype=np.float64)
    cdef const double[:, :, ::1] gz = np.ascontiguousarray(gz_in, dtype=np.float64)
    cdef Py_ssize_t P = gz.shape[0], m = gz.shape[1], D = gz.shape[2], M = m - 2
    cdef bint planar = psi is None
    ps = th if planar else np.ascontiguousarray(psi, dtype=np.float64)
    gth_arr = np.zeros((P, M))
    gps_arr = None if planar else np.zeros((P, M))
    cdef double[:, ::1] gth = gth_arr
    cdef double[:, ::1] gps = gps_arr if not planar else gth_arr
    cdef double[:, :, ::1] G = np.empty((m - 1, D, D))
    cdef double[:, ::1] gR = np.empty((D, D))
    cdef double[:, ::1] R = np.empty((D, D))
    cdef double[::1] acc = np.empty(D)
    cdef Py_ssize_t p, k, a, b, c
    cdef double s
    with nogil:
        for p in range(P):
            for k in range(m - 1):
                for a in range(D):
                    for b in range(D):
                        G[k, a, b] = 0.0
            # dL/dt_k: segments above j0 move every later atom, segments below every earlier one
            for a in range(D):
                acc[a] = 0.0
            for k in range(m - 2, j0 - 1, -1):
                for a in range(D):
                    acc[a] = acc[a] + gz[p, k + 1, a]
                    G[k, D - 1, a] = delta * acc[a]
            for a in range(D):
                acc[a] = 0.0
            for k in range(j0):
                for a in range(D):
                    acc[a] = acc[a] + gz[p, k, a]
                    G[k, D - 1, a] = -delta * acc[a]

            for k in range(m - 3, j0 - 1, -1):
                # F[k+1] = R_k F[k]:  gR = G[k+1] F[k]^T,  G[k] += R_k^T G[k+1]
                for a in range(D):
                    for b in range(D):
                        s = 0.0
                        for c in range(D):
                            s = s + G[k + 1, a, c] * F[p, k, b, c]
                        gR[a, b] = s
                _angle_grads(th, ps, planar, p, k, gR, gth, gps)
                if planar:
                    _rot2(th[p, k], R)
                else:
                    _rot3(th[p, k], ps[p, k], R)
                for a in range(D):
                    for b in range(D):
                        s = 0.0
                        for c in range(D):
                            s = s + R[c, a] * G[k + 1, c, b]
                        G[k, a, b] = G[k, a, b] + s
            for k in range(j0):
                # F[k] = R_k^T F[k+1]:  gR = F[k+1] G[k]^T,  G[k+1] += R_k G[k]
                for a in range(D):
                    for b in range(D):
                        s = 0.0
                        for c in range(D):
                            s = s + F[p, k + 1, a, c] * G[k, b, c]
                        gR[a, b] = s
                _angle_grads(th, ps, planar, p, k, gR, gth, gps)
                if planar:
                    _rot2(th[p, k], R)
                else:
                    _rot3(th[p, k], ps[p, k], R)
                for a in range(D):
                    for b in range(D):
                        s = 0.0
                        for c in range(D):
                            s = s + R[a, c] * G[k, c, b]
                        G[k + 1, a, b] = G[k + 1, a, b] + s
    return gth_arr, gps_arr


cdef inline void _angle_grads(const double[:, ::1] th, const double[:, ::1] ps, bint planar,
                              Py_ssize_t p, Py_ssize_t k, double[:, ::1] gR,
                              double[:, ::1] gth, double[:, ::1] gps) noexcept nogil:
    cdef double ct = cos(th[p, k]), st = sin(th[p, k]), cp, sp
    if planar:
        gth[p, k] = -st * gR[0, 0] - ct * gR[0, 1] + ct * gR[1, 0] - st * gR[1, 1]
        return
    cp = cos(ps[p, k])
    sp = sin(ps[p, k])
    gth[p, k] = (-cp * st * gR[0, 0] + cp * ct * gR[0, 1]
                 - ct * gR[1, 0] - st * gR[1, 1]
                 - sp * st * gR[2, 0] + sp * ct * gR[2, 1])
    gps[p, k] = (-sp * ct * gR[0, 0] - sp * st * gR[0, 1] - cp * gR[0, 2]
                 + cp * ct * gR[2, 0] + cp * st * gR[2, 1] - sp * gR[2, 2])


def project(z_in, axes, double sigma, double scale):
    cdef const double[:, :, ::1] z = np.ascontiguousarray(z_in, dtype=np.float64)
    cdef Py_ssize_t P = z.shape[0], m = z.shape[1]
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef const double[::1] xa = np.ascontiguousarray(axes[0], dtype=np.float64)
    cdef const double[::1] ya
    cdef Py_ssize_t Nx = xa.shape[0], Ny, p, j, a, b
    cdef double d, gxv
    cdef double[:, ::1] out1
    cdef double[:, :, ::1] out2
    cdef double[::1] gx, gy
    if len(axes) == 1:
        res = np.zeros((P, Nx))
        out1 = res
        with nogil:
            for p in range(P):
                for j in range(m):
                    for a in range(Nx):
                        d = xa[a] - z[p, j, 0]
                        out1[p, a] = out1[p, a] + exp(-d * d * inv2s2)
                for a in range(Nx):
                    out1[p, a] = scale * out1[p, a]
        return res
    ya = np.ascontiguousarray(axes[1], dtype=np.float64)
    Ny = ya.shape[0]
    res = np.zeros((P, Nx, Ny))
    out2 = res
    gx = np.empty(Nx)
    gy = np.empty(Ny)
    with nogil:
        for p in range(P):
            for j in range(m):
                for a in range(Nx):
                    d = xa[a] - z[p, j, 0]
                    gx[a] = exp(-d * d * inv2s2)
                for b in range(Ny):
                    d = ya[b] - z[p, j, 1]
                    gy[b] = scale * exp(-d * d * inv2s2)
                for a in range(Nx):
                    gxv = gx[a]
                    if gxv < 1e-300:
                        continue
                    for b in range(Ny):
                        out2[p, a, b] = out2[p, a, b] + gxv * gy[b]
    return res


def project_backward(z_in, axes, double sigma, double scale, gimg_in):
    cdef const double[:, :, ::1] z = np.ascontiguousarray(z_in, dtype=np.float64)
    cdef Py_ssize_t P = z.shape[0], m = z.shape[1], D = z.shape[2]
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double inv_s2 = 1.0 / (sigma * sigma)
    cdef const double[::1] xa = np.ascontiguousarray(axes[0], dtype=np.float64)
    cdef const double[::1] ya
    cdef Py_ssize_t Nx = xa.shape[0], Ny, p, j, a, b
    cdef double d, e, sx, sy, t, u
    gz_arr = np.zeros((P, m, D))
    cdef double[:, :, ::1] gz = gz_arr
    cdef const double[:, ::1] g1
    cdef const double[:, :, ::1] g2
    cdef double[::1] gx, gy, dx, dy
    if len(axes) == 1:
        g1 = np.ascontiguousarray(gimg_in, dtype=np.float64)
        with nogil:
            for p in range(P):
                for j in range(m):
                    sx = 0.0
                    for a in range(Nx):
                        d = xa[a] - z[p, j, 0]
                        sx = sx + g1[p, a] * exp(-d * d * inv2s2) * d
                    gz[p, j, 0] = scale * sx * inv_s2
        return gz_arr
    g2 = np.ascontiguousarray(gimg_in, dtype=np.float64)
    ya = np.ascontiguousarray(axes[1], dtype=np.float64)
    Ny = ya.shape[0]
    gx = np.empty(Nx)
    gy = np.empty(Ny)
    dx = np.empty(Nx)
    dy = np.empty(Ny)
    with nogil:
        for p in range(P):
            for j in range(m):
                for a in range(Nx):
                    dx[a] = xa[a] - z[p, j, 0]
                    gx[a] = exp(-dx[a] * dx[a] * inv2s2)
                for b in range(Ny):
                    dy[b] = ya[b] - z[p, j, 1]
                    gy[b] = exp(-dy[b] * dy[b] * inv2s2)
                sx = 0.0
                sy = 0.0
                for a in range(Nx):
                    if gx[a] < 1e-300:
                        continue
                    t = 0.0
                    u = 0.0
                    for b in range(Ny):
                        e = g2[p, a, b] * gy[b]
                        t = t + e
                        u = u + e * dy[b]
                    sx = sx + gx[a] * dx[a] * t
                    sy = sy + gx[a] * u
                gz[p, j, 0] = scale * sx * inv_s2
                gz[p, j, 1] = scale * sy * inv_s2
    return gz_arr
