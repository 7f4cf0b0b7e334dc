"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ccore.pyx`` with the same signature
and the same array conventions:

* ``theta``, ``psi``: ``(P, m-2)`` float64, ``psi`` is ``None`` for planar chains
* ``zhat``: ``(P, D)``; ``Fhat``: ``(P, D, D)``
* ``j0``: 0-based frame index of the reference atom
* ``z``: ``(P, m, D)`` atom positions; ``F``: ``(P, m-1, D, D)`` frames

The tangent of segment ``k`` is the last row of ``F[:, k]``.
"""

import numpy as np


def rotations(theta, psi=None):
    """Batched transition matrices, shape ``(..., D, D)``."""
    ct, st = np.cos(theta), np.sin(theta)
    if psi is None:
        R = np.empty(theta.shape + (2, 2))
        R[..., 0, 0] = ct
        R[..., 0, 1] = -st
        R[..., 1, 0] = st
        R[..., 1, 1] = ct
        return R
    cp, sp = np.cos(psi), np.sin(psi)
    R = np.empty(theta.shape + (3, 3))
    R[..., 0, 0] = cp * ct
    R[..., 0, 1] = cp * st
    R[..., 0, 2] = -sp
    R[..., 1, 0] = -st
    R[..., 1, 1] = ct
    R[..., 1, 2] = 0.0
    R[..., 2, 0] = sp * ct
    R[..., 2, 1] = sp * st
    R[..., 2, 2] = cp
    return R


def _rotation_partials(theta, psi=None):
    ct, st = np.cos(theta), np.sin(theta)
    if psi is None:
        dT = np.empty(theta.shape + (2, 2))
        dT[..., 0, 0] = -st
        dT[..., 0, 1] = -ct
        dT[..., 1, 0] = ct
        dT[..., 1, 1] = -st
        return dT, None
    cp, sp = np.cos(psi), np.sin(psi)
    dT = np.zeros(theta.shape + (3, 3))
    dT[..., 0, 0] = -cp * st
    dT[..., 0, 1] = cp * ct
    dT[..., 1, 0] = -ct
    dT[..., 1, 1] = -st
    dT[..., 2, 0] = -sp * st
    dT[..., 2, 1] = sp * ct
    dP = np.zeros(theta.shape + (3, 3))
    dP[..., 0, 0] = -sp * ct
    dP[..., 0, 1] = -sp * st
    dP[..., 0, 2] = -cp
    dP[..., 2, 0] = cp * ct
    dP[..., 2, 1] = cp * st
    dP[..., 2, 2] = -sp
    return dT, dP


def synthesize(theta, psi, zhat, Fhat, j0, delta):
    P, M = theta.shape
    m = M + 2
    D = zhat.shape[1]
    R = rotations(theta, psi)
    F = np.empty((P, m - 1, D, D))
    F[:, j0] = Fhat
    for k in range(j0, m - 2):
        F[:, k + 1] = R[:, k] @ F[:, k]
    for k in range(j0 - 1, -1, -1):
        F[:, k] = np.swapaxes(R[:, k], 1, 2) @ F[:, k + 1]
    step = delta * F[:, :, D - 1, :]
    z = np.empty((P, m, D))
    z[:, j0] = zhat
    for k in range(j0, m - 1):
        z[:, k + 1] = z[:, k] + step[:, k]
    for k in range(j0 - 1, -1, -1):
        z[:, k] = z[:, k + 1] - step[:, k]
    return z, F


def frenet_backward(theta, psi, F, j0, delta, gz):
    """Pull ``dL/dz`` back to ``(dL/dtheta, dL/dpsi)`` through the recursion."""
    P, m, D = gz.shape
    M = m - 2
    # dL/dt_k: segments above j0 move every later atom, segments below move every earlier one
    gt = np.zeros((P, m - 1, D))
    acc = np.zeros((P, D))
    for k in range(m - 2, j0 - 1, -1):
        acc += gz[:, k + 1]
        gt[:, k] = delta * acc
    acc = np.zeros((P, D))
    for k in range(j0):
        acc += gz[:, k]
        gt[:, k] = -delta * acc

    G = np.zeros((P, m - 1, D, D))
    G[:, :, D - 1, :] = gt
    R = rotations(theta, psi)
    gR = np.zeros((P, M, D, D))
    for k in range(m - 3, j0 - 1, -1):
        # F[k+1] = R_k F[k]
        gR[:, k] = G[:, k + 1] @ np.swapaxes(F[:, k], 1, 2)
        G[:, k] += np.swapaxes(R[:, k], 1, 2) @ G[:, k + 1]
    for k in range(j0):
        # F[k] = R_k^T F[k+1]
        gR[:, k] = F[:, k + 1] @ np.swapaxes(G[:, k], 1, 2)
        G[:, k + 1] += R[:, k] @ G[:, k]

    dT, dP = _rotation_partials(theta, psi)
    gtheta = np.einsum("pkab,pkab->pk", gR, dT)
    gpsi = None if psi is None else np.einsum("pkab,pkab->pk", gR, dP)
    return gtheta, gpsi


def _profiles(coord, axis, sigma):
    # coord (P, m), axis (N,) -> (P, m, N) gaussian factors and offsets
    diff = axis[None, None, :] - coord[:, :, None]
    return np.exp(-(diff * diff) / (2.0 * sigma * sigma)), diff


def project(z, axes, sigma, scale):
    """Line integrals along the last coordinate, sampled on the grid axes."""
    if len(axes) == 1:
        g, _ = _profiles(z[:, :, 0], axes[0], sigma)
        return scale * g.sum(axis=1)
    gx, _ = _profiles(z[:, :, 0], axes[0], sigma)
    gy, _ = _profiles(z[:, :, 1], axes[1], sigma)
    return scale * np.einsum("pja,pjb->pab", gx, gy, optimize=True)


def project_backward(z, axes, sigma, scale, gimg):
    """Adjoint of :func:`project`: ``dL/dz`` given ``dL/dimage``."""
    P, m, D = z.shape
    gz = np.zeros((P, m, D))
    s2 = sigma * sigma
    if len(axes) == 1:
        g, diff = _profiles(z[:, :, 0], axes[0], sigma)
        gz[:, :, 0] = scale * np.einsum("pja,pa->pj", g * diff, gimg) / s2
        return gz
    gx, dx = _profiles(z[:, :, 0], axes[0], sigma)
    gy, dy = _profiles(z[:, :, 1], axes[1], sigma)
    T = np.einsum("pab,pjb->pja", gimg, gy, optimize=True)
    U = np.einsum("pab,pja->pjb", gimg, gx, optimize=True)
    gz[:, :, 0] = scale * np.einsum("pja,pja->pj", gx * dx, T) / s2
    gz[:, :, 1] = scale * np.einsum("pjb,pjb->pj", gy * dy, U) / s2
    return gz
