import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainspec import recon
from chainspec.datasets import Dataset
from chainspec.forward import ForwardModelConfig, ProjectionGrid, project_points
from chainspec.frenet import ChainAngles, synthesize_curve
from chainspec.recon import CoefficientMatrices, FitConfig
from chainspec.spectral import SpectralBasis
from conftest import random_rotation


def small_problem(rng, dim, m=8, K=2, n=3, N=16, noise=1.0, planted=None, n_test=0):
    """Tiny dataset with random poses, reference angles and orthonormal Phi."""
    theta0 = rng.uniform(-1, 1, m - 2)
    psi0 = rng.uniform(0.3, 2.5, m - 2) if dim == 3 else None
    ref = ChainAngles(theta0, psi0)
    Q = np.linalg.qr(rng.normal(size=(max(n, K), K)))[0][:n]
    basis = SpectralBasis(np.arange(K, dtype=float), Q)
    delta = 1.3
    j0 = int(rng.integers(1, m))
    positions = rng.normal(size=(n, dim))
    frames = np.stack([random_rotation(rng, dim) for _ in range(n)])
    half = delta * m * 0.7 + 3
    grid = ProjectionGrid.centered(N, np.zeros(dim - 1), half)
    fwd = ForwardModelConfig(0.8, 1.5, grid)
    truth_coeffs = planted or CoefficientMatrices(
        rng.normal(scale=0.5, size=(m - 2, K)),
        rng.normal(scale=0.5, size=(m - 2, K)) if dim == 3 else None)
    th = theta0 + Q @ truth_coeffs.A.T
    ps = None if dim == 2 else psi0 + Q @ truth_coeffs.B.T
    from chainspec import _kernels
    z, _ = _kernels.synthesize(th, ps, positions, frames, j0 - 1, delta)
    clean = project_points(z, fwd)
    images = clean + rng.normal(scale=noise, size=clean.shape)
    is_test = np.zeros(n, dtype=bool)
    is_test[:n_test] = True
    data = Dataset(fwd=fwd, delta=delta, j0=j0, ref_angles=ref, images=images, clean=clean,
                   positions=positions, frames=frames, betas=np.zeros((n, 1)), truth=z,
                   is_test=is_test)
    return data, basis, truth_coeffs


def random_coeffs(rng, m, K, dim, mask=None, scale=0.4):
    return CoefficientMatrices(rng.normal(scale=scale, size=(m - 2, K)),
                               rng.normal(scale=scale, size=(m - 2, K)) if dim == 3 else None,
                               mask)


def finite_difference_check(data, basis, coeffs, batch, h=1e-6):
    dA, dB = recon.gradient(coeffs, batch, data, basis, data.ref_angles, data.fwd)
    free = coeffs.free_rows
    worst = 0.0
    for name, G in (("A", dA), ("B", dB)):
        if G is None:
            continue
        M = getattr(coeffs, name)
        for idx in np.ndindex(M.shape):
            if not free[idx[0]]:
                assert G[idx] == 0.0
                continue
            saved = M[idx]
            M[idx] = saved + h
            fp = recon.loss(coeffs, batch, data, basis, data.ref_angles, data.fwd)
            M[idx] = saved - h
            fm = recon.loss(coeffs, batch, data, basis, data.ref_angles, data.fwd)
            M[idx] = saved
            fd = (fp - fm) / (2 * h)
            err = abs(fd - G[idx]) / max(abs(fd), abs(G[idx]), 1e-8 / 1e-5)
            worst = max(worst, err if abs(fd - G[idx]) > 1e-8 else 0.0)
    return worst


# coefficient container

def test_mask_zeroes_rows_and_validates():
    c = CoefficientMatrices(np.ones((6, 2)), np.ones((6, 2)), mask=[2, 5])
    np.testing.assert_array_equal(c.A[:, 0], [0, 1, 0, 0, 1, 0])
    np.testing.assert_array_equal(c.B[:, 1], [0, 1, 0, 0, 1, 0])
    with pytest.raises(ValueError):
        CoefficientMatrices(np.ones((6, 2)), mask=[0])
    with pytest.raises(ValueError):
        CoefficientMatrices(np.ones((6, 2)), np.ones((5, 2)))


def test_fit_config_validation():
    for bad in (dict(epochs=-1), dict(batch_size=0), dict(learning_rate=0.0),
                dict(max_steps=-1), dict(loss_reduction="median")):
        with pytest.raises(ValueError):
            FitConfig(**bad)


# angle model

def test_zero_coefficients_return_reference():
    ref = ChainAngles([0.1, 0.2, 0.3], [1.0, 1.1, 1.2])
    a = recon.angles_for_particle(CoefficientMatrices.zeros(3, 4, 3), ref, np.ones(4))
    np.testing.assert_array_equal(a.theta, ref.theta)
    np.testing.assert_array_equal(a.psi, ref.psi)


def test_single_term_expansion():
    ref = ChainAngles([0.1, 0.2, 0.3])
    dtheta = np.array([0.5, -0.25, 4.0])
    a = recon.angles_for_particle(CoefficientMatrices(dtheta[:, None]), ref, [1.0])
    np.testing.assert_array_equal(a.theta, ref.theta + dtheta)


def test_expansion_matches_direct_sum():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(7, 4))
    B = rng.normal(size=(7, 4))
    ref = ChainAngles(rng.normal(size=7), rng.normal(size=7))
    phi = rng.normal(size=4)
    a = recon.angles_for_particle(CoefficientMatrices(A, B), ref, phi)
    for j in range(7):
        assert abs(a.theta[j] - (ref.theta[j] + sum(A[j, k] * phi[k] for k in range(4)))) < 1e-14
        assert abs(a.psi[j] - (ref.psi[j] + sum(B[j, k] * phi[k] for k in range(4)))) < 1e-14


def test_dimension_mismatch_errors():
    ref = ChainAngles([0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        recon.angles_for_particle(CoefficientMatrices(np.zeros((3, 2))), ref, np.ones(3))
    with pytest.raises(ValueError):
        recon.angles_for_particle(CoefficientMatrices(np.zeros((3, 2)), np.zeros((3, 2))), ref, np.ones(2))


# prediction

def _record(data, i):
    return data.record(i)


@pytest.mark.parametrize("dim", [2, 3])
def test_planted_prediction_reproduces_clean_image(dim):
    rng = np.random.default_rng(1)
    data, basis, truth = small_problem(rng, dim, noise=0.0)
    for i in range(len(data)):
        img = recon.predict_image(_record(data, i), truth, basis, data.ref_angles, data.fwd)
        assert img.values.shape == data.fwd.grid.shape
        np.testing.assert_allclose(img.values, data.clean[i], atol=1e-10)


def test_zero_coefficients_predict_reference_curve():
    rng = np.random.default_rng(2)
    data, basis, _ = small_problem(rng, 3)
    zero = CoefficientMatrices.zeros(data.m - 2, basis.K, 3)
    rec = _record(data, 1)
    img = recon.predict_image(rec, zero, basis, data.ref_angles, data.fwd)
    curve = synthesize_curve(data.ref_angles, rec.pose, data.delta)
    np.testing.assert_allclose(img.values, project_points(curve.points[None], data.fwd)[0], atol=1e-12)


# loss

def test_loss_zero_at_planted_noise_free_optimum():
    rng = np.random.default_rng(3)
    data, basis, truth = small_problem(rng, 2, noise=0.0)
    assert recon.loss(truth, [0, 1, 2], data, basis, data.ref_angles, data.fwd) < 1e-18


def test_loss_constant_offset():
    rng = np.random.default_rng(4)
    for dim, N in ((2, 16), (3, 12)):
        data, basis, truth = small_problem(rng, dim, N=N, noise=0.0)
        data.images[0] = data.clean[0] + 0.3
        L = recon.loss(truth, [0], data, basis, data.ref_angles, data.fwd)
        assert abs(L - 0.09 * N ** (dim - 1)) < 1e-12


def test_loss_matches_direct_recomputation():
    rng = np.random.default_rng(5)
    data, basis, _ = small_problem(rng, 3, n=4)
    c = random_coeffs(rng, data.m, basis.K, 3)
    total = 0.0
    for i in (0, 2, 3):
        pred = recon.predict_image(_record(data, i), c, basis, data.ref_angles, data.fwd).values
        total += float(np.sum((pred - data.images[i]) ** 2))
    L = recon.loss(c, [0, 2, 3], data, basis, data.ref_angles, data.fwd)
    assert abs(L - total / 3) <= 1e-12 * total
    with pytest.raises(ValueError):
        recon.loss(c, [], data, basis, data.ref_angles, data.fwd)


def test_loss_against_clean_target():
    rng = np.random.default_rng(6)
    data, basis, truth = small_problem(rng, 2, noise=5.0)
    assert recon.loss(truth, [0, 1], data, basis, data.ref_angles, data.fwd, target="clean") < 1e-18
    assert recon.loss(truth, [0, 1], data, basis, data.ref_angles, data.fwd) > 1.0


# gradient

def test_gradient_vanishes_at_planted_optimum():
    rng = np.random.default_rng(7)
    for dim in (2, 3):
        data, basis, truth = small_problem(rng, dim, noise=0.0)
        dA, dB = recon.gradient(truth, [0, 1, 2], data, basis, data.ref_angles, data.fwd)
        assert np.linalg.norm(dA) < 1e-10
        if dB is not None:
            assert np.linalg.norm(dB) < 1e-10


def test_masked_rows_get_exactly_zero_gradient():
    rng = np.random.default_rng(8)
    data, basis, _ = small_problem(rng, 3)
    c = random_coeffs(rng, data.m, basis.K, 3, mask=[2, 4])
    dA, dB = recon.gradient(c, [0, 1], data, basis, data.ref_angles, data.fwd)
    pinned = ~c.free_rows
    assert np.all(dA[pinned] == 0.0) and np.all(dB[pinned] == 0.0)
    assert np.any(dA[~pinned] != 0.0)


def test_gradient_matches_finite_differences_small_instance():
    rng = np.random.default_rng(9)
    data, basis, _ = small_problem(rng, 3, m=8, K=2, n=1, N=16)
    c = random_coeffs(rng, 8, 2, 3)
    assert finite_difference_check(data, basis, c, [0]) < 1e-5


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 3), st.booleans())
def test_gradient_property(seed, dim, masked):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(4, 11))
    K = int(rng.integers(1, 4))
    N = int(rng.integers(6, 33)) if dim == 2 else int(rng.integers(6, 13))
    data, basis, _ = small_problem(rng, dim, m=m, K=K, n=3, N=N)
    mask = sorted(rng.choice(np.arange(1, m - 1), size=max(1, (m - 2) // 2), replace=False)) if masked else None
    c = random_coeffs(rng, m, K, dim, mask)
    assert finite_difference_check(data, basis, c, [0, 2]) < 1e-5


@pytest.mark.parametrize("kernels", ["python", "cython"])
def test_gradient_identical_across_backends(kernels, monkeypatch):
    from chainspec import _kernels
    if kernels not in _kernels.BACKENDS:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(10)
    data, basis, _ = small_problem(rng, 3, n=4)
    c = random_coeffs(rng, data.m, basis.K, 3)
    ref = recon.gradient(c, [0, 1, 3], data, basis, data.ref_angles, data.fwd)
    impl = _kernels.get_backend(kernels)
    for name in ("synthesize", "frenet_backward", "project", "project_backward"):
        monkeypatch.setattr(_kernels, name, getattr(impl, name))
    got = recon.gradient(c, [0, 1, 3], data, basis, data.ref_angles, data.fwd)
    np.testing.assert_allclose(got[0], ref[0], rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(got[1], ref[1], rtol=1e-10, atol=1e-10)


def test_small_step_does_not_increase_loss():
    rng = np.random.default_rng(11)
    for dim in (2, 3):
        data, basis, _ = small_problem(rng, dim, n=5)
        c = random_coeffs(rng, data.m, basis.K, dim)
        batch = np.arange(5)
        L0 = recon.loss(c, batch, data, basis, data.ref_angles, data.fwd)
        dA, dB = recon.gradient(c, batch, data, basis, data.ref_angles, data.fwd)
        lr = 1.0
        for _ in range(21):
            trial = c.copy()
            trial.A -= lr * dA
            if dB is not None:
                trial.B -= lr * dB
            if recon.loss(trial, batch, data, basis, data.ref_angles, data.fwd) <= L0:
                break
            lr /= 2
        else:
            pytest.fail("no descent within 20 halvings")


# fitting

def test_zero_epochs_give_baseline_only():
    rng = np.random.default_rng(12)
    data, basis, _ = small_problem(rng, 2, n=6, n_test=2)
    c, h = recon.sgd_fit(data, basis, data.ref_angles, data.fwd, FitConfig(epochs=0, batch_size=2))
    assert len(h) == 1 and h.epoch == [0] and h.steps == [0]
    assert np.all(c.A == 0)
    pred = recon.predict_curves(c, data.test_indices, data, basis, data.ref_angles)
    for k, i in enumerate(data.test_indices):
        ref = synthesize_curve(data.ref_angles, data.record(i).pose, data.delta).points
        np.testing.assert_allclose(pred[k], ref, atol=1e-12)


def test_history_lengths_and_table_round_trip():
    rng = np.random.default_rng(13)
    data, basis, _ = small_problem(rng, 2, n=8, n_test=2)
    _, h = recon.sgd_fit(data, basis, data.ref_angles, data.fwd,
                         FitConfig(epochs=3, batch_size=4, learning_rate=1e-4))
    assert len(h) == 4 and h.steps == [0, 2, 4, 6]
    for col in (h.train_loss, h.test_loss, h.max_err, h.avg_err):
        assert len(col) == 4
    h2 = recon.FitHistory.from_tsv(h.to_tsv())
    assert h2.to_tsv() == h.to_tsv()


def test_max_steps_stops_mid_epoch():
    rng = np.random.default_rng(14)
    data, basis, _ = small_problem(rng, 2, n=10)
    _, h = recon.sgd_fit(data, basis, data.ref_angles, data.fwd,
                         FitConfig(epochs=5, batch_size=3, learning_rate=1e-4, max_steps=5))
    assert h.steps[-1] == 5 and h.epoch == [0, 1, 2]


def test_fit_is_deterministic():
    rng = np.random.default_rng(15)
    data, basis, _ = small_problem(rng, 3, n=9, n_test=3)
    cfg = FitConfig(epochs=3, batch_size=2, learning_rate=1e-3, seed=4)
    a, ha = recon.sgd_fit(data, basis, data.ref_angles, data.fwd, cfg)
    b, hb = recon.sgd_fit(data, basis, data.ref_angles, data.fwd, cfg, threads=3)
    assert a.A.tobytes() == b.A.tobytes() and a.B.tobytes() == b.B.tobytes()
    assert ha.to_tsv() == hb.to_tsv()


def test_fit_rejects_bad_setups():
    rng = np.random.default_rng(16)
    data, basis, _ = small_problem(rng, 2, n=4, n_test=1)
    with pytest.raises(ValueError, match="batch_size"):
        recon.sgd_fit(data, basis, data.ref_angles, data.fwd, FitConfig(batch_size=4))
    wrong = SpectralBasis(np.zeros(2), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        recon.sgd_fit(data, wrong, data.ref_angles, data.fwd, FitConfig(batch_size=1))


def test_masked_angles_never_move():
    rng = np.random.default_rng(17)
    data, basis, _ = small_problem(rng, 3, m=9, n=8, n_test=2)
    mask = (2, 5)
    c, _ = recon.sgd_fit(data, basis, data.ref_angles, data.fwd,
                         FitConfig(epochs=4, batch_size=3, learning_rate=1e-3), mask=mask)
    free = c.free_rows
    for i in range(len(data)):
        a = recon.angles_for_particle(c, data.ref_angles, basis.Phi[i])
        assert np.all(a.theta[~free] == data.ref_angles.theta[~free])
        assert np.all(a.psi[~free] == data.ref_angles.psi[~free])


def test_internal_objective_equals_public_loss():
    rng = np.random.default_rng(18)
    data, basis, _ = small_problem(rng, 2, n=6)
    c = random_coeffs(rng, data.m, basis.K, 2)
    batch = [1, 3, 4]
    internal = recon._evaluate(c, batch, data, basis, data.ref_angles, data.fwd, "images", True)[0]
    assert abs(internal - recon.loss(c, batch, data, basis, data.ref_angles, data.fwd)) <= 1e-12 * internal


def test_single_angle_planted_problem_descends_monotonically():
    rng = np.random.default_rng(19)
    m, K = 10, 1
    A = np.zeros((m - 2, K))
    A[3, 0] = 0.4
    planted = CoefficientMatrices(A)
    data, _, _ = small_problem(rng, 2, m=m, K=K, n=1, N=32, noise=0.0, planted=planted)
    basis = SpectralBasis(np.zeros(1), np.ones((1, 1)))
    # regenerate images for this basis
    from chainspec import _kernels
    th = data.ref_angles.theta + A[:, 0]
    z, _ = _kernels.synthesize(th[None], None, data.positions, data.frames, data.j0 - 1, data.delta)
    data.images[:] = data.clean[:] = project_points(z, data.fwd)
    c, h = recon.sgd_fit(data, basis, data.ref_angles, data.fwd,
                         FitConfig(epochs=10, batch_size=1, learning_rate=1e-4), mask=[4])
    assert np.all(np.diff(h.train_loss) < 0)


def test_mean_reduction_scales_the_step():
    rng = np.random.default_rng(20)
    data, basis, _ = small_problem(rng, 2, n=4, N=16)
    a, _ = recon.sgd_fit(data, basis, data.ref_angles, data.fwd,
                         FitConfig(epochs=1, batch_size=4, learning_rate=1.6e-3, shuffle=False))
    b, _ = recon.sgd_fit(data, basis, data.ref_angles, data.fwd,
                         FitConfig(epochs=1, batch_size=4, learning_rate=1.6e-3 * 16, shuffle=False,
                                   loss_reduction="mean"))
    np.testing.assert_allclose(a.A, b.A, rtol=1e-12, atol=1e-15)
