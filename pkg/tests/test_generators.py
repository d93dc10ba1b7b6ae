import numpy as np
import pytest

from rsrkit.diagnostics import dssnr, kappa1, kappa2, kappa3
from rsrkit.errors import InfeasibleAngles, NotConverged, NotPD
from rsrkit.estimators import EstimatorConfig
from rsrkit.generators import (
    HaystackParams,
    apply_cone_noise,
    gen_haystack,
    init_from_subspace,
    init_from_tme,
    init_identity,
    make_rng,
    outlier_covariance,
    perturb_subspace,
    sample_subspace,
)
from rsrkit.spectral import complement_basis, principal_angles, sin_largest_angle


def test_sample_subspace_orthonormal():
    U = sample_subspace(7, 3, make_rng(1))
    assert np.abs(U.T @ U - np.eye(3)).max() <= 1e-10
    assert np.array_equal(U, sample_subspace(7, 3, make_rng(1)))
    assert sin_largest_angle(U, sample_subspace(7, 3, make_rng(2))) > 0


def test_sample_subspace_mean_projector():
    rng = make_rng(5)
    acc = np.zeros((4, 4))
    n = 10_000
    for _ in range(n):
        U = sample_subspace(4, 1, rng)
        acc += U @ U.T
    assert np.abs(acc / n - np.eye(4) / 4).max() <= 0.02


class TestPerturb:
    def test_zero(self):
        U = sample_subspace(5, 2, make_rng(0))
        V = perturb_subspace(U, [0.0, 0.0], make_rng(1))
        assert sin_largest_angle(U, V) <= 1e-12

    def test_one_angle(self):
        U = sample_subspace(4, 1, make_rng(0))
        assert principal_angles(U, perturb_subspace(U, [0.3], make_rng(1)))[0] == pytest.approx(0.3, abs=1e-10)

    def test_profile(self):
        U = sample_subspace(6, 2, make_rng(3))
        got = principal_angles(U, perturb_subspace(U, [0.4, 0.1], make_rng(4)))
        assert np.allclose(got, [0.4, 0.1], atol=1e-9)

    def test_infeasible(self):
        U = sample_subspace(3, 2, make_rng(0))
        with pytest.raises(InfeasibleAngles):
            perturb_subspace(U, [0.2, 0.1], make_rng(0))

    def test_bad_profile(self):
        U = sample_subspace(6, 2, make_rng(0))
        with pytest.raises(ValueError):
            perturb_subspace(U, [0.1, 0.4], make_rng(0))
        with pytest.raises(ValueError):
            perturb_subspace(U, [2.0, 0.1], make_rng(0))


class TestHaystack:
    def test_inliers_on_subspace(self):
        data, truth = gen_haystack(HaystackParams(n1=300, n0=100, d=2, D=5, seed=1))
        X = data.inliers
        W = truth.complement
        assert np.all(np.linalg.norm(W.T @ X, axis=0) <= 1e-12 * np.linalg.norm(X, axis=0))

    def test_counts_and_dssnr(self):
        data, truth = gen_haystack(HaystackParams(n1=123, n0=77, d=2, D=7, seed=2))
        assert (data.n1, data.n0, data.count) == (123, 77, 200)
        assert dssnr(int(truth.labels.sum()), int((~truth.labels).sum()), 2, 7) == dssnr(123, 77, 2, 7)

    def test_inlier_covariance(self):
        spec = np.array([3.0, 1.0])
        data, truth = gen_haystack(HaystackParams(n1=100_000, n0=10, d=2, D=4, inlier_spectrum=spec, seed=3))
        X = data.inliers
        emp = X @ X.T / X.shape[1]
        want = truth.basis @ np.diag(spec / 2) @ truth.basis.T
        assert np.linalg.norm(emp - want) <= 0.05 * np.linalg.norm(want)

    def test_deterministic(self):
        p = HaystackParams(n1=50, n0=40, d=1, D=3, seed=99)
        a, b = gen_haystack(p)[0], gen_haystack(p)[0]
        assert np.array_equal(a.points, b.points) and np.array_equal(a.labels, b.labels)

    def test_shuffled(self):
        data, _ = gen_haystack(HaystackParams(n1=50, n0=50, d=1, D=3, seed=0))
        assert not np.all(data.labels[:50])

    def test_general_position(self):
        data, _ = gen_haystack(HaystackParams(n1=200, n0=10, d=3, D=6, seed=4))
        rng = make_rng(0)
        X = data.inliers
        for _ in range(200):
            idx = rng.choice(X.shape[1], 3, replace=False)
            assert np.linalg.svd(X[:, idx], compute_uv=False)[-1] > 1e-8

    def test_invalid(self):
        with pytest.raises(ValueError):
            HaystackParams(n1=1, n0=1, d=3, D=3)
        with pytest.raises(ValueError):
            HaystackParams(n1=1, n0=1, d=1, D=3, inlier_spectrum=[0.0])


class TestOutlierCovariance:
    def test_cross_block(self):
        U = sample_subspace(6, 2, make_rng(0))
        S = outlier_covariance(U, 0.5)
        W = complement_basis(U)
        assert np.allclose(U.T @ S @ U, np.eye(2), atol=1e-12)
        assert np.linalg.norm(U.T @ S @ W, 2) == pytest.approx(0.5)
        assert np.linalg.eigvalsh(S).min() > 0

    def test_not_pd(self):
        with pytest.raises(NotPD):
            outlier_covariance(sample_subspace(4, 1, make_rng(0)), 1.0)


class TestCone:
    @pytest.fixture
    def base(self):
        return gen_haystack(HaystackParams(n1=2000, n0=100, d=2, D=5, seed=7))

    def test_zero(self, base):
        data, truth = base
        noisy, nt = apply_cone_noise(data, truth, 0.0, make_rng(0))
        assert np.array_equal(noisy.points, data.points)
        assert nt.noise_epsilon == 0.0

    @pytest.mark.parametrize("eps", [1e-3, 0.1, 0.5, 1.0])
    def test_constraint(self, base, eps):
        data, truth = base
        noisy, nt = apply_cone_noise(data, truth, eps, make_rng(1))
        X = noisy.inliers
        par = np.linalg.norm(truth.basis.T @ X, axis=0)
        perp = np.linalg.norm(truth.complement.T @ X, axis=0)
        assert np.all(perp <= eps * par * (1 + 1e-12))
        assert np.array_equal(noisy.outliers, data.outliers)
        assert nt.noise_epsilon == eps

    def test_near_boundary(self, base):
        data, truth = base
        noisy, _ = apply_cone_noise(data, truth, 0.5, make_rng(2))
        X = noisy.inliers
        r = np.linalg.norm(truth.complement.T @ X, axis=0) / np.linalg.norm(truth.basis.T @ X, axis=0)
        assert 0.4 <= r.max() <= 0.5

    def test_range(self, base):
        with pytest.raises(ValueError):
            apply_cone_noise(*base, 1.5, make_rng(0))


class TestInits:
    def test_identity(self):
        U = sample_subspace(5, 2, make_rng(0))
        S = init_identity(5)
        for f in (kappa1, kappa2, kappa3):
            assert abs(f(S, U) - 1) <= 1e-12

    def test_oracle(self):
        U = sample_subspace(5, 2, make_rng(0))
        a = 0.05
        assert kappa1(init_from_subspace(U, a), U) == pytest.approx((1 + a) / a, rel=1e-10)

    @pytest.mark.parametrize("deg,alpha", [(10, 0.04), (20, 0.2), (40, 0.5)])
    def test_alpha_above_angle(self, deg, alpha):
        t = np.deg2rad(deg)
        assert alpha >= np.sin(t) ** 2
        U = sample_subspace(6, 2, make_rng(deg))
        V = perturb_subspace(U, [t, 0.0], make_rng(1))
        assert kappa1(init_from_subspace(V, alpha), U) >= 1 / (4 * alpha)

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            init_from_subspace(np.eye(3)[:, :1], 0.0)

    def test_tme(self):
        data, _ = gen_haystack(HaystackParams(n1=100, n0=100, d=2, D=5, seed=1))
        S = init_from_tme(data)
        assert np.trace(S) == pytest.approx(1.0)
        with pytest.raises(NotConverged):
            init_from_tme(data, EstimatorConfig(max_iter=2, tol=0.0))
