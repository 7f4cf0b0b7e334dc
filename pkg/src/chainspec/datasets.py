"""Synthetic particle datasets: planar box-with-arms chains and 3D backbones.

Every particle draws from its own random streams keyed by ``(seed, index,
purpose)``, so a record does not depend on how many others were generated or
in which order. Projection noise has a separate seed so that the
low-dimensional representations can be held fixed while it changes.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .forward import ForwardModelConfig, ProjectionGrid, ProjectionImage, project_points, sample_density
from .frenet import ChainAngles, DiscreteCurve, Pose, extract_angles

log = logging.getLogger(__name__)

_CONFORMATION, _LOWDIM_NOISE, _PROJECTION_NOISE = 0, 1, 2

BOX_CORNERS = (33, 53, 73, 93, 123, 133)


def _stream(seed, index, purpose):
    return np.random.default_rng([int(seed), int(index), purpose])


@dataclass(frozen=True)
class ParticleRecord:
    index: int
    image: ProjectionImage
    clean_image: ProjectionImage
    pose: Pose
    beta: np.ndarray
    ground_truth: DiscreteCurve | None
    split: str


@dataclass
class Dataset:
    """Stacked per-particle arrays plus the shared model description.

    Arrays are indexed by particle along axis 0. ``ref_angles`` is the known
    conformation used to anchor reconstruction.
    """

    fwd: ForwardModelConfig
    delta: float
    j0: int
    ref_angles: ChainAngles
    images: np.ndarray
    clean: np.ndarray
    positions: np.ndarray
    frames: np.ndarray
    betas: np.ndarray
    truth: np.ndarray | None = None
    is_test: np.ndarray | None = None
    noise_variance: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.images.shape[0]
        if self.is_test is None:
            self.is_test = np.zeros(n, dtype=bool)
        for name in ("clean", "positions", "frames", "betas", "is_test"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if self.images.shape[1:] != self.fwd.grid.shape or self.clean.shape != self.images.shape:
            raise ValueError("image arrays do not match the projection grid")
        if self.truth is not None and self.truth.shape[:2] != (n, self.m):
            raise ValueError("ground-truth array has the wrong shape")

    def __len__(self):
        return self.images.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def m(self):
        return self.ref_angles.m

    @property
    def train_indices(self):
        return np.flatnonzero(~self.is_test)

    @property
    def test_indices(self):
        return np.flatnonzero(self.is_test)

    def record(self, i):
        grid = self.fwd.grid
        truth = None if self.truth is None else DiscreteCurve(self.truth[i], self.delta)
        return ParticleRecord(
            index=int(i),
            image=ProjectionImage(self.images[i], grid),
            clean_image=ProjectionImage(self.clean[i], grid),
            pose=Pose(self.positions[i], self.frames[i], self.j0),
            beta=self.betas[i],
            ground_truth=truth,
            split="test" if self.is_test[i] else "train",
        )

    def __getitem__(self, i):
        return self.record(i)

    def with_split(self, is_test):
        return replace(self, is_test=np.asarray(is_test, dtype=bool).copy())


@dataclass(frozen=True)
class Box2DConfig:
    n: int = 4000
    m: int = 149
    delta: float = 3.5
    j0: int = 33
    sigma: float = 7.0
    # absolute projection scale; the default reproduces a clean-image variance
    # of about 182.6 on the default grid
    nu: float = 0.0694
    grid_n: int = 128
    half_width: float = 155.0
    noise_variance: float = 2500.0
    lowdim_n: int = 64
    lowdim_half_width: float = 155.0
    lowdim_noise_variance: float = 9.0
    lowdim_mode: str = "rotated"
    center: tuple = (0.0, 0.0)
    seed: int = 0
    noise_seed: int | None = None

    def __post_init__(self):
        if self.n < 1 or self.grid_n < 2 or self.lowdim_n < 2:
            raise ValueError("counts must be positive")
        if self.noise_variance < 0 or self.lowdim_noise_variance < 0:
            raise ValueError("variances must be >= 0")
        if self.m != 149:
            raise ValueError("the box-with-arms chain has exactly 149 atoms")
        if self.lowdim_mode not in ("rotated", "canonical"):
            raise ValueError("lowdim_mode is 'rotated' or 'canonical'")


@dataclass(frozen=True)
class Backbone3DConfig:
    n: int = 4000
    delta: float = 3.8412
    j0: int = 112
    sigma: float = 3.0
    # absolute projection scale; reproduces a clean-image variance near 10
    # for the adenylate kinase C-alpha trajectory on the default grid
    nu: float = 0.1475
    grid_n: int = 64
    half_width: float | None = None
    noise_variance: float = 1089.0
    lowdim_n: int = 16
    lowdim_mode: str = "rotated"
    graph_sigma: float = 80.0
    center: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    noise_seed: int | None = None
    trajectory_path: str | None = None

    def __post_init__(self):
        if self.n < 1 or self.grid_n < 2 or self.lowdim_n < 2:
            raise ValueError("counts must be positive")
        if self.noise_variance < 0:
            raise ValueError("variances must be >= 0")
        if self.lowdim_mode not in ("rotated", "canonical"):
            raise ValueError("lowdim_mode is 'rotated' or 'canonical'")


def box_arms_angles(t33, t133, tbox):
    """Torsion angles of the 149-atom box-with-arms chain (1-based corners)."""
    theta = np.zeros(147)
    theta[33 - 1] = -np.pi / 2 + t33
    theta[133 - 1] = -np.pi / 2 + t133
    theta[53 - 1] = theta[93 - 1] = -np.pi / 2 + tbox
    theta[73 - 1] = theta[123 - 1] = -np.pi / 2 - tbox
    return ChainAngles(theta)


def random_rotation(D, rng):
    """Haar-distributed rotation in SO(2) or SO(3)."""
    if D == 2:
        a = rng.uniform(-np.pi, np.pi)
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, -s], [s, c]])
    if D == 3:
        q = rng.normal(size=4)
        w, x, y, z = q / np.linalg.norm(q)
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
    raise ValueError(f"unsupported dimension {D}")


def _noisy(clean, variance, seed, purpose, offset=0):
    out = clean.copy()
    if variance > 0:
        sd = np.sqrt(variance)
        for i in range(clean.shape[0]):
            out[i] += _stream(seed, offset + i, purpose).normal(0.0, sd, size=clean.shape[1:])
    return out


def _lowdim(points, axes, sigma, variance, seed):
    betas = np.empty((points.shape[0], np.prod([a.size for a in axes])))
    for i in range(points.shape[0]):
        betas[i] = sample_density(points[i], axes, sigma).ravel()
    return _noisy(betas, variance, seed, _LOWDIM_NOISE)


def _check_inside(points, center, half_width, margin):
    reach = np.abs(points - np.asarray(center)).max()
    if reach + margin > half_width:
        raise ValueError(f"structures reach {reach:.1f} from the center; grid half-width "
                         f"{half_width} leaves less than {margin} margin")


def sample_box_arms(cfg):
    """Random box-with-arms particles with 1D projections."""
    n, D = cfg.n, 2
    center = np.asarray(cfg.center, dtype=float)
    theta = np.empty((n, cfg.m - 2))
    frames = np.empty((n, D, D))
    params = np.empty((n, 3))
    for i in range(n):
        rng = _stream(cfg.seed, i, _CONFORMATION)
        params[i] = rng.uniform([-np.pi / 2, -np.pi / 2, -np.pi / 4],
                                [np.pi / 2, np.pi / 2, np.pi / 4])
        theta[i] = box_arms_angles(*params[i]).theta
        frames[i] = random_rotation(D, rng)
    positions = np.tile(center, (n, 1))
    j0i = cfg.j0 - 1
    truth, _ = _kernels.synthesize(theta, None, positions, frames, j0i, cfg.delta)
    _check_inside(truth, center, cfg.half_width, 3 * cfg.sigma)

    grid = ProjectionGrid.centered(cfg.grid_n, center[:1], cfg.half_width)
    fwd = ForwardModelConfig(cfg.nu, cfg.sigma, grid)
    clean = project_points(truth, fwd)
    noise_seed = cfg.seed if cfg.noise_seed is None else cfg.noise_seed
    images = _noisy(clean, cfg.noise_variance, noise_seed, _PROJECTION_NOISE)

    if cfg.lowdim_mode == "rotated":
        lowdim_pts = truth
    else:
        lowdim_pts, _ = _kernels.synthesize(theta, None, positions,
                                            np.tile(np.eye(D), (n, 1, 1)), j0i, cfg.delta)
    lo_axes = ProjectionGrid.centered(cfg.lowdim_n, center, cfg.lowdim_half_width).axes()
    betas = _lowdim(lowdim_pts, lo_axes, cfg.sigma, cfg.lowdim_noise_variance, cfg.seed)

    return Dataset(
        fwd=fwd, delta=cfg.delta, j0=cfg.j0, ref_angles=box_arms_angles(0.0, 0.0, 0.0),
        images=images, clean=clean, positions=positions, frames=frames, betas=betas,
        truth=truth, noise_variance=cfg.noise_variance,
        meta={"kind": "box2d", "true_theta": theta, "box_params": params},
    )


def spacing_stats(frames):
    """Mean and variance of all consecutive inter-atom distances."""
    d = np.concatenate([f.spacings() for f in frames])
    return float(d.mean()), float(d.var())


def save_trajectory(path, frames, comment=None):
    with open(path, "w") as fh:
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"# {line}\n")
        for k, f in enumerate(frames):
            pts = f.points if isinstance(f, DiscreteCurve) else np.asarray(f, dtype=float)
            fh.write(f"FRAME {k}\n")
            for p in pts:
                fh.write(" ".join(repr(float(v)) for v in p) + "\n")


def load_trajectory(path, max_relative_deviation=0.35):
    """Read a plain-text multi-frame C-alpha trajectory.

    Every frame becomes a :class:`DiscreteCurve` whose ``delta`` is the mean
    spacing over the whole file. Spacings further than
    ``max_relative_deviation`` from that mean are rejected. The default leaves
    room for cis peptides, whose C-alpha spacing is close to 2.9.
    """
    frames, current = [], None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("FRAME"):
                parts = line.split()
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: malformed frame header {line!r}")
                current = []
                frames.append(current)
                continue
            if current is None:
                raise ValueError(f"{path}:{lineno}: coordinates before the first FRAME line")
            parts = line.split(" ")
            try:
                if len(parts) != 3:
                    raise ValueError
                current.append([float(v) for v in parts])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected three numbers, got {line!r}") from None
    if not frames:
        raise ValueError(f"{path}: no frames")
    arrays = []
    for k, fr in enumerate(frames):
        if len(fr) < 3:
            raise ValueError(f"{path}: frame {k} has {len(fr)} atoms, need at least 3")
        arrays.append(np.array(fr))
    lengths = np.concatenate([np.linalg.norm(np.diff(a, axis=0), axis=1) for a in arrays])
    mean = float(lengths.mean())
    worst = np.abs(lengths - mean).max() / mean
    if worst > max_relative_deviation:
        raise ValueError(f"{path}: spacings deviate {100 * worst:.0f}% from the mean; not a chain")
    log.info("trajectory %s: %d frames, spacing mean %.4f variance %.4f",
             path, len(arrays), mean, float(lengths.var()))
    return [DiscreteCurve(a, mean) for a in arrays]


def _compact_backbone_angles(m, rng, candidates=256):
    """Secondary-structure angle pattern folded greedily into a compact globule."""
    theta = np.zeros(m - 2)
    psi = np.full(m - 2, 1.2)
    loops = []
    k = 0
    while k < m - 2:
        kind = rng.choice(["helix", "strand", "loop"], p=[0.4, 0.2, 0.4])
        length = {"helix": rng.integers(7, 13), "strand": rng.integers(4, 7),
                  "loop": rng.integers(3, 6)}[kind]
        sl = slice(k, min(k + length, m - 2))
        if kind == "helix":
            theta[sl], psi[sl] = 0.87, 1.55
        elif kind == "strand":
            theta[sl], psi[sl] = np.pi, 0.55
        else:
            loops.append(sl)
        k = sl.stop
    # choose each loop so that the chain up to the next loop stays compact
    for n_loop, sl in enumerate(loops):
        size = sl.stop - sl.start
        stop = loops[n_loop + 1].start + 2 if n_loop + 1 < len(loops) else m
        th = np.tile(theta, (candidates, 1))
        ps = np.tile(psi, (candidates, 1))
        th[:, sl] = rng.uniform(-np.pi, np.pi, (candidates, size))
        ps[:, sl] = rng.uniform(0.9, 1.9, (candidates, size))
        z, _ = _kernels.synthesize(th, ps, np.zeros((candidates, 3)),
                                   np.tile(np.eye(3), (candidates, 1, 1)), 0, 3.8412)
        z = z[:, :stop]
        rg = np.sqrt(((z - z.mean(axis=1, keepdims=True)) ** 2).sum(-1).mean(-1))
        d = np.linalg.norm(z[:, :, None] - z[:, None, :], axis=-1)
        idx = np.arange(stop)
        clash = ((d < 4.0) & (np.abs(idx[:, None] - idx) > 2)).sum(axis=(1, 2))
        best = np.argmin(rg + 2.0 * clash)
        theta[sl], psi[sl] = th[best, sl], ps[best, sl]
    theta[0] = 0.0
    return theta, psi


def synthetic_backbone_trajectory(n_frames=102, m=214, seed=14, vibration=0.058):
    """A compact protein-like chain morphing smoothly between two states.

    Stand-in for a molecular dynamics C-alpha trajectory when none is supplied:
    helices and strands joined by loops, folded into a globule, with three
    hinge regions that rotate over the trajectory and small isotropic
    vibrations of every atom.
    """
    rng = np.random.default_rng(seed)
    theta, psi = _compact_backbone_angles(m, rng)
    hinges = [(int(0.15 * m), 4), (int(0.55 * m), 5), (int(0.75 * m), 4)]
    amp = rng.uniform(0.15, 0.3, size=len(hinges)) * rng.choice([-1, 1], size=len(hinges))
    s = np.linspace(0.0, 1.0, n_frames)[:, None]
    th = np.tile(theta, (n_frames, 1))
    for (start, width), a in zip(hinges, amp):
        th[:, start:start + width] += a * (0.5 - 0.5 * np.cos(np.pi * s))
    z, _ = _kernels.synthesize(th, np.tile(psi, (n_frames, 1)), np.zeros((n_frames, 3)),
                               np.tile(np.eye(3), (n_frames, 1, 1)), 0, 3.8412)
    z = z + rng.normal(0.0, vibration, size=z.shape)
    mean = float(np.linalg.norm(np.diff(z, axis=1), axis=-1).mean())
    return [DiscreteCurve(p, mean) for p in z]


def auto_half_width(frames, j0, sigma, margin_sigmas=3.0):
    """Smallest grid half-width containing every frame in any orientation about atom ``j0``."""
    reach = max(np.linalg.norm(f.points - f.points[j0 - 1], axis=1).max() for f in frames)
    return float(np.ceil(reach + margin_sigmas * sigma))


def sample_backbone(frames, cfg):
    """Random orientations of random trajectory frames with 2D projections."""
    if not frames:
        raise ValueError("no trajectory frames")
    D = 3
    if len({f.m for f in frames}) != 1:
        raise ValueError("trajectory frames have different atom counts")
    canon = [extract_angles(f, cfg.j0, tol=None)[0] for f in frames]
    ref = canon[0]
    center = np.asarray(cfg.center, dtype=float)
    half_width = cfg.half_width
    if half_width is None:
        # measured on the constant-spacing chains that are actually projected
        th = np.stack([a.theta for a in canon])
        ps = np.stack([a.psi for a in canon])
        zc, _ = _kernels.synthesize(th, ps, np.zeros((len(canon), 3)),
                                    np.tile(np.eye(3), (len(canon), 1, 1)), cfg.j0 - 1, cfg.delta)
        half_width = auto_half_width([DiscreteCurve(z, cfg.delta) for z in zc], cfg.j0, cfg.sigma)

    n = cfg.n
    which = np.empty(n, dtype=int)
    frames_rot = np.empty((n, D, D))
    for i in range(n):
        rng = _stream(cfg.seed, i, _CONFORMATION)
        which[i] = rng.integers(len(frames))
        frames_rot[i] = random_rotation(D, rng)
    theta = np.stack([canon[w].theta for w in which])
    psi = np.stack([canon[w].psi for w in which])
    positions = np.tile(center, (n, 1))
    truth, _ = _kernels.synthesize(theta, psi, positions, frames_rot, cfg.j0 - 1, cfg.delta)
    _check_inside(truth, center, half_width, 3 * cfg.sigma)

    grid = ProjectionGrid.centered(cfg.grid_n, center[:2], half_width)
    fwd = ForwardModelConfig(cfg.nu, cfg.sigma, grid)
    clean = project_points(truth, fwd)
    noise_seed = cfg.seed if cfg.noise_seed is None else cfg.noise_seed
    images = _noisy(clean, cfg.noise_variance, noise_seed, _PROJECTION_NOISE)

    if cfg.lowdim_mode == "rotated":
        lowdim_pts = truth
    else:
        lowdim_pts, _ = _kernels.synthesize(theta, psi, positions, np.tile(np.eye(D), (n, 1, 1)),
                                            cfg.j0 - 1, cfg.delta)
    lo_axes = [np.linspace(c - half_width, c + half_width, cfg.lowdim_n) for c in center]
    betas = _lowdim(lowdim_pts, lo_axes, cfg.sigma, 0.0, cfg.seed)

    return Dataset(
        fwd=fwd, delta=cfg.delta, j0=cfg.j0, ref_angles=ref,
        images=images, clean=clean, positions=positions, frames=frames_rot, betas=betas,
        truth=truth, noise_variance=cfg.noise_variance,
        meta={"kind": "backbone3d", "frame_index": which, "true_theta": theta, "true_psi": psi},
    )


def split(dataset, test_fraction, rng):
    """Seeded random train/test partition; returns a relabelled copy."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test fraction {test_fraction} outside (0, 1)")
    n = len(dataset)
    n_test = int(round(test_fraction * n))
    n_test = min(max(n_test, 1), n - 1) if n > 1 else n_test
    is_test = np.zeros(n, dtype=bool)
    is_test[rng.permutation(n)[:n_test]] = True
    return dataset.with_split(is_test)
