"""Spectral angle model, projection least squares and its SGD fit.

Particle ``i`` gets torsion angles ``theta0 + A @ Phi[i]`` (and bond angles
``psi0 + B @ Phi[i]`` in 3D). Its chain is synthesized from the known pose and
projected; the fit minimizes the mean squared projection residual over a batch.
Gradients are exact, pulled back by hand through the projection and the
frame recursion.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .forward import ProjectionImage, project_points, project_points_adjoint
from .frenet import ChainAngles, DiscreteCurve, Pose, synthesize_curve
from .metrics import avg_pointcloud_error, max_pointcloud_error

log = logging.getLogger(__name__)

# particles per evaluation chunk; fixed so that sums do not depend on threads
CHUNK = 64


@dataclass
class CoefficientMatrices:
    """Expansion coefficients, rows indexed by angle and columns by eigenvector.

    ``mask`` lists the 1-based angle indices allowed to vary; every other row
    of ``A`` (and ``B``) is kept at exactly zero. ``None`` frees all rows.
    """

    A: np.ndarray
    B: np.ndarray | None = None
    mask: tuple | None = None

    def __post_init__(self):
        self.A = np.array(self.A, dtype=float)
        if self.A.ndim != 2:
            raise ValueError("A must be a matrix")
        if self.B is not None:
            self.B = np.array(self.B, dtype=float)
            if self.B.shape != self.A.shape:
                raise ValueError(f"B has shape {self.B.shape}, A has {self.A.shape}")
        if self.mask is not None:
            mask = tuple(sorted({int(j) for j in self.mask}))
            if mask and not (1 <= mask[0] and mask[-1] <= self.A.shape[0]):
                raise ValueError(f"mask indices must lie in [1, {self.A.shape[0]}]")
            self.mask = mask
        self.enforce_mask()

    @classmethod
    def zeros(cls, n_angles, K, dim=2, mask=None):
        B = np.zeros((n_angles, K)) if dim == 3 else None
        return cls(np.zeros((n_angles, K)), B, mask)

    @property
    def K(self):
        return self.A.shape[1]

    @property
    def free_rows(self):
        """Boolean row selector of the varying angles."""
        free = np.ones(self.A.shape[0], dtype=bool)
        if self.mask is not None:
            free[:] = False
            free[np.asarray(self.mask, dtype=int) - 1] = True
        return free

    def enforce_mask(self):
        if self.mask is not None:
            pinned = ~self.free_rows
            self.A[pinned] = 0.0
            if self.B is not None:
                self.B[pinned] = 0.0

    def copy(self):
        return CoefficientMatrices(self.A.copy(), None if self.B is None else self.B.copy(),
                                   self.mask)


@dataclass(frozen=True)
class FitConfig:
    """SGD settings.

    ``max_steps`` optionally stops after that many parameter updates,
    whichever of it and ``epochs`` comes first; the history then gains a
    final row for the partial epoch.

    ``loss_reduction`` sets what the learning rate multiplies. ``"sum"``
    steps along the gradient of :func:`loss` itself; ``"mean"`` divides it
    by the number of samples per image, i.e. the per-sample mean squared
    error that many deep learning libraries minimize by default.
    """

    epochs: int = 100
    batch_size: int = 500
    learning_rate: float = 0.1
    seed: int = 0
    shuffle: bool = True
    max_steps: int | None = None
    loss_reduction: str = "sum"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError("loss_reduction is 'sum' or 'mean'")


@dataclass
class FitHistory:
    """Per-epoch diagnostics; row 0 is the untrained (A = B = 0) baseline."""

    epoch: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    max_err: list = field(default_factory=list)
    avg_err: list = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def append(self, epoch, steps, train_loss, test_loss, max_err, avg_err):
        self.epoch.append(epoch)
        self.steps.append(steps)
        self.train_loss.append(train_loss)
        self.test_loss.append(test_loss)
        self.max_err.append(max_err)
        self.avg_err.append(avg_err)

    def to_tsv(self):
        rows = ["epoch\tsteps\ttrain_loss\ttest_loss\tmax_err\tavg_err"]
        for r in zip(self.epoch, self.steps, self.train_loss, self.test_loss,
                     self.max_err, self.avg_err):
            rows.append("\t".join(repr(v) if isinstance(v, float) else str(v) for v in r))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_tsv(cls, text):
        h = cls()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("epoch"):
            raise ValueError("not a fit history table")
        for lineno, ln in enumerate(lines[1:], start=2):
            parts = ln.split("\t")
            if len(parts) != 6:
                raise ValueError(f"line {lineno}: expected 6 columns, got {len(parts)}")
            h.append(int(parts[0]), int(parts[1]), *(float(v) for v in parts[2:]))
        return h


def _check_dims(coeffs, ref_angles, phi_cols):
    if coeffs.A.shape != (ref_angles.theta.size, phi_cols):
        raise ValueError(f"A has shape {coeffs.A.shape}, expected "
                         f"({ref_angles.theta.size}, {phi_cols})")
    if (coeffs.B is None) != (ref_angles.psi is None):
        raise ValueError("B must be given exactly when the reference has bond angles")


def angles_for_particle(coeffs, ref_angles, phi_i):
    """Reference angles plus the spectral expansion at one particle (not wrapped)."""
    phi_i = np.asarray(phi_i, dtype=float)
    if phi_i.ndim != 1:
        raise ValueError("phi_i must be a vector")
    _check_dims(coeffs, ref_angles, phi_i.size)
    theta = ref_angles.theta + coeffs.A @ phi_i
    psi = None if coeffs.B is None else ref_angles.psi + coeffs.B @ phi_i
    return ChainAngles(theta, psi)


def _batch_angles(coeffs, ref_angles, Phi_b):
    theta = ref_angles.theta[None] + Phi_b @ coeffs.A.T
    psi = None if coeffs.B is None else ref_angles.psi[None] + Phi_b @ coeffs.B.T
    return theta, psi


def _synthesize_batch(coeffs, idx, dataset, basis, ref_angles):
    Phi_b = basis.Phi[idx]
    theta, psi = _batch_angles(coeffs, ref_angles, Phi_b)
    z, F = _kernels.synthesize(np.ascontiguousarray(theta),
                               None if psi is None else np.ascontiguousarray(psi),
                               np.ascontiguousarray(dataset.positions[idx]),
                               np.ascontiguousarray(dataset.frames[idx]),
                               dataset.j0 - 1, dataset.delta)
    return Phi_b, theta, psi, z, F


def predict_curves(coeffs, indices, dataset, basis, ref_angles):
    """Predicted atom positions ``(len(indices), m, D)`` using the known poses."""
    idx = np.asarray(indices, dtype=int)
    _check_dims(coeffs, ref_angles, basis.K)
    return _synthesize_batch(coeffs, idx, dataset, basis, ref_angles)[3]


def predict_image(particle, coeffs, basis, ref_angles, fwd_cfg, delta=None):
    """Predicted projection of one particle record.

    ``particle.index`` selects the row of ``basis.Phi``; ``delta`` defaults to
    the ground-truth spacing when the record has one.
    """
    if delta is None:
        if particle.ground_truth is None:
            raise ValueError("delta is required for records without ground truth")
        delta = particle.ground_truth.delta
    angles = angles_for_particle(coeffs, ref_angles, basis.Phi[particle.index])
    pose = particle.pose if isinstance(particle.pose, Pose) else Pose(*particle.pose)
    curve = synthesize_curve(angles, pose, delta)
    return ProjectionImage(project_points(curve.points[None], fwd_cfg)[0], fwd_cfg.grid)


def _chunk_value_grad(coeffs, idx, dataset, basis, ref_angles, fwd_cfg, target, want_grad):
    Phi_b, theta, psi, z, F = _synthesize_batch(coeffs, idx, dataset, basis, ref_angles)
    resid = project_points(z, fwd_cfg) - target[idx]
    value = float(np.sum(resid * resid))
    if not want_grad:
        return value, None, None
    gz = project_points_adjoint(z, fwd_cfg, 2.0 * resid)
    gth, gps = _kernels.frenet_backward(
        np.ascontiguousarray(theta), None if psi is None else np.ascontiguousarray(psi),
        F, dataset.j0 - 1, dataset.delta, gz)
    dA = gth.T @ Phi_b
    dB = None if gps is None else gps.T @ Phi_b
    return value, dA, dB


def _evaluate(coeffs, batch, dataset, basis, ref_angles, fwd_cfg, target="images",
              want_grad=True, pool=None):
    idx = np.asarray(batch, dtype=int)
    if idx.size == 0:
        raise ValueError("empty batch")
    _check_dims(coeffs, ref_angles, basis.K)
    images = getattr(dataset, target)
    chunks = [idx[s:s + CHUNK] for s in range(0, idx.size, CHUNK)]

    def work(c):
        return _chunk_value_grad(coeffs, c, dataset, basis, ref_angles, fwd_cfg, images, want_grad)

    parts = list(pool.map(work, chunks)) if pool is not None else [work(c) for c in chunks]
    value = sum(p[0] for p in parts) / idx.size
    if not want_grad:
        return value, None, None
    dA = sum(p[1] for p in parts) / idx.size
    dB = None if coeffs.B is None else sum(p[2] for p in parts) / idx.size
    free = coeffs.free_rows
    dA[~free] = 0.0
    if dB is not None:
        dB[~free] = 0.0
    return value, dA, dB


def loss(coeffs, batch, dataset, basis, ref_angles, fwd_cfg, target="images"):
    """Mean over the batch of the summed squared projection residual.

    ``target`` names the dataset array compared against: ``"images"`` (noisy)
    or ``"clean"``.
    """
    return _evaluate(coeffs, batch, dataset, basis, ref_angles, fwd_cfg, target, False)[0]


def gradient(coeffs, batch, dataset, basis, ref_angles, fwd_cfg, target="images"):
    """``(dA, dB)`` of :func:`loss`; pinned rows are zero, ``dB`` is None in 2D."""
    _, dA, dB = _evaluate(coeffs, batch, dataset, basis, ref_angles, fwd_cfg, target, True)
    return dA, dB


def _epoch_row(history, epoch, steps, coeffs, dataset, basis, ref_angles, fwd_cfg, pool):
    train, test = dataset.train_indices, dataset.test_indices
    train_loss = _evaluate(coeffs, train, dataset, basis, ref_angles, fwd_cfg,
                           "images", False, pool)[0]
    test_loss = max_err = avg_err = float("nan")
    if test.size:
        test_loss = _evaluate(coeffs, test, dataset, basis, ref_angles, fwd_cfg,
                              "clean", False, pool)[0]
        if dataset.truth is not None:
            pred = predict_curves(coeffs, test, dataset, basis, ref_angles)
            max_err = max_pointcloud_error(dataset.truth[test], pred)
            avg_err = avg_pointcloud_error(dataset.truth[test], pred)
    history.append(epoch, steps, train_loss, test_loss, max_err, avg_err)
    log.info("epoch %d: train %.6g test %.6g max %.4g avg %.4g",
             epoch, train_loss, test_loss, max_err, avg_err)


def sgd_fit(dataset, basis, ref_angles, fwd_cfg, fit_cfg, mask=None, threads=1,
            callback=None):
    """Plain mini-batch SGD from ``A = B = 0``.

    Returns the fitted :class:`CoefficientMatrices` and a :class:`FitHistory`
    with one row per completed epoch after the baseline row. The training loss
    is evaluated on all training particles after each epoch; test quantities
    use the clean images and ground truth of the test particles.
    """
    if basis.n != len(dataset):
        raise ValueError(f"basis has {basis.n} rows, dataset has {len(dataset)} particles")
    train = dataset.train_indices
    if train.size == 0:
        raise ValueError("no training particles")
    if fit_cfg.batch_size > train.size:
        raise ValueError(f"batch_size {fit_cfg.batch_size} exceeds {train.size} training particles")
    coeffs = CoefficientMatrices.zeros(ref_angles.theta.size, basis.K, ref_angles.dim, mask)
    rng = np.random.default_rng(fit_cfg.seed)
    history = FitHistory()
    lr = fit_cfg.learning_rate
    if fit_cfg.loss_reduction == "mean":
        lr /= int(np.prod(fwd_cfg.grid.shape))
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        _epoch_row(history, 0, 0, coeffs, dataset, basis, ref_angles, fwd_cfg, pool)
        steps = 0
        for epoch in range(1, fit_cfg.epochs + 1):
            order = rng.permutation(train) if fit_cfg.shuffle else train
            stopped = False
            for s in range(0, order.size, fit_cfg.batch_size):
                if fit_cfg.max_steps is not None and steps >= fit_cfg.max_steps:
                    stopped = True
                    break
                _, dA, dB = _evaluate(coeffs, order[s:s + fit_cfg.batch_size], dataset,
                                      basis, ref_angles, fwd_cfg, "images", True, pool)
                coeffs.A -= lr * dA
                if dB is not None:
                    coeffs.B -= lr * dB
                coeffs.enforce_mask()
                steps += 1
            if stopped and history.steps[-1] == steps:
                break
            _epoch_row(history, epoch, steps, coeffs, dataset, basis, ref_angles, fwd_cfg, pool)
            if callback is not None:
                callback(epoch, coeffs, history)
            if stopped:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return coeffs, history


def predicted_curve(coeffs, i, dataset, basis, ref_angles):
    return DiscreteCurve(predict_curves(coeffs, [i], dataset, basis, ref_angles)[0], dataset.delta)
