"""Point-cloud errors between predicted and ground-truth chains."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ErrorReport:
    max_error: float
    avg_error: float
    per_particle_max: np.ndarray

    def __post_init__(self):
        if self.avg_error > self.max_error + 1e-12 * max(1.0, self.max_error):
            raise ValueError("average error exceeds maximum error")

    def to_tsv(self):
        lines = ["particle\tmax_error"]
        lines += [f"{i}\t{v!r}" for i, v in enumerate(self.per_particle_max.tolist())]
        return (f"# max_error\t{self.max_error!r}\n# avg_error\t{self.avg_error!r}\n"
                + "\n".join(lines) + "\n")


def _stack(curves):
    if isinstance(curves, np.ndarray):
        arr = curves
    else:
        arr = np.stack([getattr(c, "points", c) for c in curves])
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError("expected a collection of (m, D) point clouds")
    return arr


def _distances(truth, pred):
    t, p = _stack(truth), _stack(pred)
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: truth {t.shape}, prediction {p.shape}")
    if t.shape[0] == 0:
        raise ValueError("no curves")
    return np.linalg.norm(t - p, axis=-1)


def max_pointcloud_error(truth, pred):
    """Mean over particles of the largest per-atom displacement."""
    return float(_distances(truth, pred).max(axis=1).mean())


def avg_pointcloud_error(truth, pred):
    """Mean per-atom displacement over all particles and atoms."""
    return float(_distances(truth, pred).mean())


def error_report(truth, pred):
    d = _distances(truth, pred)
    per = d.max(axis=1)
    return ErrorReport(float(per.mean()), float(d.mean()), per)


def _kabsch(p, q):
    # rotation and shift minimizing |R p + s - q|
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    H = (p - pc).T @ (q - qc)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(p.shape[1])
    S[-1, -1] = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ S @ U.T
    return (p - pc) @ R.T + qc


def aligned_error_report(truth, pred):
    """Errors after optimally superimposing each prediction on its truth.

    For studies where the pose itself is uncertain; the standard report uses
    the known poses and does no alignment.
    """
    t, p = _stack(truth), _stack(pred)
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: truth {t.shape}, prediction {p.shape}")
    aligned = np.stack([_kabsch(pi, ti) for pi, ti in zip(p, t)])
    return error_report(t, aligned)
