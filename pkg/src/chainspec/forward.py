"""Gaussian-mixture densities and their parallel-beam projections.

Each atom carries a Gaussian blob ``nu * exp(-|x - z|^2 / (2 sigma^2))``.
Projecting along the last coordinate axis integrates the blob in closed form,
leaving a Gaussian of the same width scaled by ``sigma * sqrt(2 pi)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import _kernels

SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ProjectionGrid:
    """Regular sample grid of a projection image.

    ``extent`` holds one ``(min, max)`` pair per image axis; sample ``a`` on an
    axis sits at ``min + a * (max - min) / (n - 1)``.
    """

    n: int
    extent: tuple

    def __post_init__(self):
        ext = tuple((float(lo), float(hi)) for lo, hi in self.extent)
        if len(ext) not in (1, 2):
            raise ValueError("projection grids are 1D or 2D")
        if self.n < 2:
            raise ValueError("need at least 2 samples per axis")
        for lo, hi in ext:
            if not hi > lo:
                raise ValueError(f"empty extent [{lo}, {hi}]")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def centered(cls, n, center, half_width):
        """Square grid of ``n`` samples per axis spanning ``center +- half_width``."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(n, tuple((c - half_width, c + half_width) for c in center))

    @property
    def dim(self):
        return len(self.extent)

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def spacing(self):
        return tuple((hi - lo) / (self.n - 1) for lo, hi in self.extent)

    def axes(self):
        return [np.linspace(lo, hi, self.n) for lo, hi in self.extent]

    def to_dict(self):
        return {"n": self.n, "extent": [list(e) for e in self.extent]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["n"], tuple(tuple(e) for e in d["extent"]))


@dataclass(frozen=True)
class ForwardModelConfig:
    nu: float
    sigma: float
    grid: ProjectionGrid
    psf: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.nu > 0 and self.sigma > 0):
            raise ValueError("nu and sigma must be positive")
        if self.psf is not None:
            k = np.array(self.psf, dtype=float)
            if k.ndim != self.grid.dim or any(s % 2 == 0 for s in k.shape):
                raise ValueError(
                    f"psf must be a {self.grid.dim}D kernel with odd side lengths")
            if not np.all(np.isfinite(k)):
                raise ValueError("psf has non-finite entries")
            k.flags.writeable = False
            object.__setattr__(self, "psf", k)

    @property
    def scale(self):
        """Peak value of a single projected atom."""
        return self.nu * self.sigma * SQRT_2PI


@dataclass(frozen=True)
class ProjectionImage:
    values: np.ndarray
    grid: ProjectionGrid

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"image shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)


def density_at(curve, cfg, x):
    x = np.asarray(x, dtype=float)
    d2 = np.sum((curve.points - x) ** 2, axis=1)
    return float(cfg.nu * np.exp(-d2 / (2 * cfg.sigma ** 2)).sum())


def sample_density(points, axes, sigma, nu=1.0):
    """Evaluate the Gaussian mixture on a full tensor grid.

    ``points`` is ``(m, D)``; ``axes`` holds one coordinate array per dimension.
    The kernel is separable, so the grid is a sum of outer products.
    """
    factors = [np.exp(-(ax[None, :] - points[:, d, None]) ** 2 / (2 * sigma ** 2))
               for d, ax in enumerate(axes)]
    if len(axes) == 2:
        return nu * (factors[0].T @ factors[1])
    fx, fy, fz = factors
    fxy = (fx[:, :, None] * fy[:, None, :]).reshape(fx.shape[0], -1)
    return nu * (fxy.T @ fz).reshape(fx.shape[1], fy.shape[1], fz.shape[1])


def _apply_psf(images, psf):
    return signal.convolve(images, psf[None], mode="same")


def _apply_psf_adjoint(images, psf):
    return signal.correlate(images, psf[None], mode="same")


def project_points(z, cfg):
    """Batched projection of atom positions ``(P, m, D)`` -> images ``(P, *grid.shape)``."""
    z = np.ascontiguousarray(z, dtype=float)
    if z.shape[-1] != cfg.grid.dim + 1:
        raise ValueError(f"{z.shape[-1]}D atoms on a {cfg.grid.dim}D projection grid")
    img = _kernels.project(z, cfg.grid.axes(), cfg.sigma, cfg.scale)
    if cfg.psf is not None:
        img = _apply_psf(img, cfg.psf)
    return img


def project_points_adjoint(z, cfg, gimg):
    """Gradient of ``<gimg, project_points(z)>`` with respect to ``z``."""
    if cfg.psf is not None:
        gimg = _apply_psf_adjoint(gimg, cfg.psf)
    return _kernels.project_backward(np.ascontiguousarray(z, dtype=float),
                                     cfg.grid.axes(), cfg.sigma, cfg.scale,
                                     np.ascontiguousarray(gimg, dtype=float))


def project(curve, cfg):
    return ProjectionImage(project_points(curve.points[None], cfg)[0], cfg.grid)


def add_noise(image, variance, rng):
    if variance < 0:
        raise ValueError(f"noise variance must be >= 0, got {variance}")
    if variance == 0:
        return ProjectionImage(image.values.copy(), image.grid)
    noise = rng.normal(0.0, np.sqrt(variance), size=image.values.shape)
    return ProjectionImage(image.values + noise, image.grid)


def snr(clean_images, noise_variance):
    """Pooled sample variance of the clean images over the noise variance."""
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    if isinstance(clean_images, np.ndarray):
        values = clean_images
    else:
        images = list(clean_images)
        if not images:
            raise ValueError("no images")
        values = np.concatenate([np.ravel(getattr(im, "values", im)) for im in images])
    if values.size == 0:
        raise ValueError("no images")
    return float(np.var(values) / noise_variance)
