"""Discrete Frenet-frame parametrization of atomic chains.

A chain of ``m`` atoms with constant spacing ``delta`` is encoded by ``m-2``
torsion angles (plus ``m-2`` bond angles in 3D) and a pose: the position and
frame of a reference atom ``j0``. Frames are stored with rows
``(normal, binormal, tangent)`` in 3D and ``(normal, tangent)`` in 2D, so the
step to the next atom is ``delta`` times the last row of the frame.

Conventions
-----------
* ``F[k+1] = R(theta[k], psi[k]) @ F[k]`` for ``k = 0 .. m-3`` (0-based).
* ``j0`` is 1-based in the public API, ``1 <= j0 <= m-1``; the reference frame
  is ``F[j0-1]`` and the reference position is atom ``j0-1``.
* Angles extracted from a 3D curve lie on a canonical slice: the first torsion
  is 0 and every bond angle is in ``[0, pi]``. Curves synthesized from angles
  on that slice round-trip exactly; any other angle set still reproduces the
  same point cloud after extract -> synthesize.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

COLLINEAR_TOL = 1e-10


@dataclass(frozen=True)
class ChainAngles:
    """Torsion (and, in 3D, bond) angles of a chain.

    Values are not wrapped on construction: predictions made during
    optimization may leave ``[-pi, pi]`` and remain valid because the
    transition matrices are 2*pi periodic. Use :meth:`wrapped` for display.
    """

    theta: np.ndarray
    psi: np.ndarray | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 1:
            raise ValueError("theta must be one-dimensional")
        object.__setattr__(self, "theta", theta)
        if self.psi is not None:
            psi = np.array(self.psi, dtype=float)
            if psi.shape != theta.shape:
                raise ValueError(f"psi has length {psi.size}, theta has {theta.size}")
            object.__setattr__(self, "psi", psi)
        theta.flags.writeable = False
        if self.psi is not None:
            self.psi.flags.writeable = False

    @property
    def m(self):
        return self.theta.size + 2

    @property
    def dim(self):
        return 2 if self.psi is None else 3

    def wrapped(self):
        """Copy with every angle mapped into ``(-pi, pi]``."""
        return ChainAngles(wrap_angle(self.theta),
                           None if self.psi is None else wrap_angle(self.psi))


@dataclass(frozen=True)
class Pose:
    """Position and frame of the reference atom ``j0`` (1-based)."""

    position: np.ndarray
    frame: np.ndarray
    reference_index: int

    def __post_init__(self):
        position = np.array(self.position, dtype=float)
        frame = np.array(self.frame, dtype=float)
        D = position.size
        if position.shape != (D,) or D not in (2, 3):
            raise ValueError("position must be a vector in R^2 or R^3")
        if frame.shape != (D, D):
            raise ValueError(f"frame must be {D}x{D}, got {frame.shape}")
        if (np.abs(frame.T @ frame - np.eye(D)).max() > 1e-12
                or abs(np.linalg.det(frame) - 1.0) > 1e-12):
            raise ValueError("frame is not a rotation matrix")
        if int(self.reference_index) < 1:
            raise ValueError("reference_index is 1-based and must be >= 1")
        position.flags.writeable = False
        frame.flags.writeable = False
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "reference_index", int(self.reference_index))

    @property
    def dim(self):
        return self.position.size


@dataclass(frozen=True)
class DiscreteCurve:
    points: np.ndarray
    delta: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ValueError("points must have shape (m, 2) or (m, 3)")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def m(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def spacings(self):
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)


def wrap_angle(a):
    """Map angles into ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def rotation_matrix_3d(theta, psi):
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(psi), np.sin(psi)
    return np.array([[cp * ct, cp * st, -sp],
                     [-st, ct, 0.0],
                     [sp * ct, sp * st, cp]])


def rotation_matrix_2d(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _check_j0(j0, m):
    if not 1 <= j0 <= m - 1:
        raise IndexError(f"reference index j0={j0} outside [1, {m - 1}]")


def synthesize_curve(angles, pose, delta):
    """Solve the frame recursion from the pose at ``pose.reference_index``.

    Returns
    -------
    DiscreteCurve
        ``m = len(angles.theta) + 2`` points with consecutive spacing ``delta``.
    """
    if angles.dim != pose.dim:
        raise ValueError(f"{angles.dim}D angles with a {pose.dim}D pose")
    m = angles.m
    _check_j0(pose.reference_index, m)
    psi = None if angles.psi is None else angles.psi[None]
    z, _ = _kernels.synthesize(angles.theta[None], psi, pose.position[None],
                               pose.frame[None], pose.reference_index - 1, float(delta))
    return DiscreteCurve(z[0], delta)


def _tangents(points, delta, tol):
    seg = np.diff(points, axis=0)
    length = np.linalg.norm(seg, axis=1)
    if tol is not None:
        bad = np.flatnonzero(np.abs(length - delta) > tol * delta)
        if bad.size:
            j = bad[0]
            raise ValueError(
                f"not a chain: |z[{j + 1}] - z[{j}]| = {length[j]:.9g}, expected {delta:.9g}")
    if np.any(length == 0):
        raise ValueError("not a chain: coincident consecutive atoms")
    return seg / length[:, None]


def _perp_unit(v, t):
    w = v - np.dot(v, t) * t
    return w / np.linalg.norm(w)


def _binormals(t):
    n_seg = t.shape[0]
    c = np.cross(t[:-1], t[1:])
    norms = np.linalg.norm(c, axis=1)
    good = norms >= COLLINEAR_TOL
    b = np.empty_like(t)
    if not good.any():
        # straight chain: any fixed direction orthogonal to the line
        axis = np.eye(3)[np.argmin(np.abs(t[0]))]
        b[0] = _perp_unit(axis, t[0])
        for k in range(1, n_seg):
            b[k] = _perp_unit(b[k - 1], t[k])
        return b
    first = np.argmax(good) + 1
    b[first] = c[first - 1] / norms[first - 1]
    for k in range(first - 1, -1, -1):
        b[k] = _perp_unit(b[k + 1], t[k])
    for k in range(first + 1, n_seg):
        if good[k - 1]:
            b[k] = c[k - 1] / norms[k - 1]
        else:
            b[k] = _perp_unit(b[k - 1], t[k])
    return b


def frames_from_curve(curve, tol=1e-6):
    """Discrete Frenet frames ``(m-1, D, D)`` of a chain."""
    pts = curve.points
    if curve.m < 3:
        raise ValueError(f"need at least 3 atoms, got {curve.m}")
    t = _tangents(pts, curve.delta, tol)
    if curve.dim == 2:
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return np.stack([n, t], axis=1)
    b = _binormals(t)
    n = np.cross(b, t)
    return np.stack([n, b, t], axis=1)


def extract_angles(curve, j0, tol=1e-6):
    """Recover ``(ChainAngles, Pose)`` such that :func:`synthesize_curve` rebuilds ``curve``.

    ``tol`` is the relative spacing tolerance against ``curve.delta``; pass
    ``None`` to accept approximate chains (e.g. molecular dynamics frames),
    whose segment directions are then normalized individually.
    """
    m = curve.m
    if m < 3:
        raise ValueError(f"need at least 3 atoms, got {m}")
    _check_j0(j0, m)
    F = frames_from_curve(curve, tol)
    R = F[1:] @ np.swapaxes(F[:-1], 1, 2)
    if curve.dim == 2:
        angles = ChainAngles(np.arctan2(R[:, 1, 0], R[:, 1, 1]))
    else:
        angles = ChainAngles(np.arctan2(-R[:, 1, 0], R[:, 1, 1]),
                             np.arctan2(-R[:, 0, 2], R[:, 2, 2]))
    pose = Pose(curve.points[j0 - 1], F[j0 - 1], j0)
    return angles, pose
