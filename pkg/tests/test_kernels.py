import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainspec import _kernels

from conftest import random_rotation

needs_compiled = pytest.mark.skipif("cython" not in _kernels.BACKENDS,
                                    reason="compiled extension not built")


def test_backend_lookup():
    assert _kernels.get_backend("python") is _kernels._pycore
    assert _kernels.BACKEND in _kernels.BACKENDS
    with pytest.raises(ValueError, match="not available"):
        _kernels.get_backend("fortran")


def _problem(seed, dim, P=3, m=9):
    rng = np.random.default_rng(seed)
    th = rng.uniform(-np.pi, np.pi, (P, m - 2))
    ps = rng.uniform(0.2, 2.9, (P, m - 2)) if dim == 3 else None
    zhat = rng.normal(size=(P, dim))
    Fhat = np.stack([random_rotation(rng, dim) for _ in range(P)])
    j0 = int(rng.integers(0, m - 1))
    return rng, th, ps, zhat, Fhat, j0


@needs_compiled
@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([2, 3]), st.integers(3, 20))
def test_backends_agree(seed, dim, m):
    py, cy = _kernels.get_backend("python"), _kernels.get_backend("cython")
    rng, th, ps, zhat, Fhat, j0 = _problem(seed, dim, m=m)
    np.testing.assert_allclose(cy.rotations(th, ps), py.rotations(th, ps), atol=1e-14)
    z1, F1 = py.synthesize(th, ps, zhat, Fhat, j0, 1.7)
    z2, F2 = cy.synthesize(th, ps, zhat, Fhat, j0, 1.7)
    np.testing.assert_allclose(z2, z1, atol=1e-11)
    np.testing.assert_allclose(F2, F1, atol=1e-12)
    gz = rng.normal(size=z1.shape)
    for a, b in zip(cy.frenet_backward(th, ps, F1, j0, 1.7, gz), py.frenet_backward(th, ps, F1, j0, 1.7, gz)):
        if b is None:
            assert a is None
        else:
            np.testing.assert_allclose(a, b, atol=1e-10)
    axes = [np.linspace(-15, 15, 11 + k) for k in range(dim - 1)]
    np.testing.assert_allclose(cy.project(z1, axes, 1.3, 0.7), py.project(z1, axes, 1.3, 0.7), atol=1e-12)
    g = rng.normal(size=(z1.shape[0],) + tuple(a.size for a in axes))
    np.testing.assert_allclose(cy.project_backward(z1, axes, 1.3, 0.7, g),
                               py.project_backward(z1, axes, 1.3, 0.7, g), atol=1e-11)


@pytest.mark.parametrize("dim", [2, 3])
def test_rotations_are_orthogonal(dim):
    _, th, ps, *_ = _problem(0, dim, P=4)
    R = _kernels.rotations(th, ps)
    eye = np.broadcast_to(np.eye(dim), R.shape)
    np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), eye, atol=1e-13)
    np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-13)
