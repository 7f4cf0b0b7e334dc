"""Similarity graphs over particles and their normalized-Laplacian eigenbasis."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass(frozen=True)
class GraphConfig:
    """Edge weights for the particle graph.

    ``kernel`` is ``"gaussian"`` (uses ``sigma``) or ``"knn"`` (uses ``k``).
    Weights below ``sparsify_threshold`` are zeroed; 0 disables that step.
    """

    kernel: str = "gaussian"
    sigma: float = 1.0
    k: int = 10
    sparsify_threshold: float = 0.0

    def __post_init__(self):
        if self.kernel not in ("gaussian", "knn"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian kernel needs sigma > 0")
        if self.kernel == "knn" and self.k < 1:
            raise ValueError("knn kernel needs k >= 1")
        if self.sparsify_threshold < 0:
            raise ValueError("sparsify_threshold must be >= 0")


@dataclass(frozen=True)
class SpectralBasis:
    eigenvalues: np.ndarray
    Phi: np.ndarray

    @property
    def n(self):
        return self.Phi.shape[0]

    @property
    def K(self):
        return self.Phi.shape[1]


def squared_distances(X):
    """Pairwise squared Euclidean distances between rows of ``X``."""
    X = np.asarray(X, dtype=float)
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def build_weights(betas, cfg):
    """Symmetric nonnegative weight matrix with zero diagonal."""
    try:
        X = np.asarray(betas, dtype=float)
    except ValueError:
        raise ValueError("all low-dimensional representations must have the same length") from None
    if X.ndim != 2:
        raise ValueError("all low-dimensional representations must have the same length")
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two particles")
    d2 = squared_distances(X)
    if cfg.kernel == "gaussian":
        W = np.exp(-d2 / (2.0 * cfg.sigma ** 2))
    else:
        if cfg.k >= n:
            raise ValueError(f"k={cfg.k} must be smaller than n={n}")
        masked = d2.copy()
        np.fill_diagonal(masked, np.inf)
        # stable sort so ties resolve by index
        nbrs = np.argsort(masked, axis=1, kind="stable")[:, :cfg.k]
        W = np.zeros((n, n))
        W[np.repeat(np.arange(n), cfg.k), nbrs.ravel()] = 1.0
        W = np.maximum(W, W.T)
    np.fill_diagonal(W, 0.0)
    if cfg.sparsify_threshold > 0:
        W[W < cfg.sparsify_threshold] = 0.0
    return W


def normalized_laplacian(W):
    """``D^{-1/2} (D - W) D^{-1/2}`` for a symmetric weight matrix."""
    W = np.asarray(W, dtype=float)
    deg = W.sum(axis=1)
    isolated = np.flatnonzero(deg <= 0)
    if isolated.size:
        raise ValueError(f"vertex {isolated[0]} is isolated (zero degree)")
    s = 1.0 / np.sqrt(deg)
    L = -(s[:, None] * W * s[None, :])
    L[np.diag_indices_from(L)] += 1.0
    return 0.5 * (L + L.T)


def smallest_eigenpairs(L, K):
    """The ``K`` smallest eigenpairs of a symmetric matrix, sign-normalized.

    Each eigenvector is flipped so that its largest-magnitude entry (first one
    on ties) is positive.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if L.shape != (n, n):
        raise ValueError("Laplacian must be square")
    if not 1 <= K <= n:
        raise ValueError(f"K={K} outside [1, {n}]")
    asym = np.abs(L - L.T).max() if n else 0.0
    if asym > 1e-10:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    vals, vecs = linalg.eigh(L, subset_by_index=[0, K - 1], driver="evr")
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(K)])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    return SpectralBasis(vals, vecs)


def embed(betas, cfg, K):
    """Weights -> Laplacian -> first ``K`` eigenpairs."""
    return smallest_eigenpairs(normalized_laplacian(build_weights(betas, cfg)), K)
