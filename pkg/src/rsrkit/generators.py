"""Synthetic data and initializations.

Random numbers come from numpy's counter-based Philox generator. A stream
is identified by ``(seed, tag, block)``: each model component (basis,
inliers, outliers, shuffle, noise) has its own tag, and Gaussian samples are
drawn in blocks of ``BLOCK`` points with one stream per block. Any block can
therefore be regenerated independently, and the output does not depend on
how the work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, GroundTruth
from .errors import DimensionError, InfeasibleAngles, NotConverged, NotPD
from .estimators import EstimatorConfig, tme_solve
from .spectral import as_basis, complement_basis

BLOCK = 4096

# stream tags
_BASIS, _INLIERS, _OUTLIERS, _SHUFFLE, _NOISE_MAG, _NOISE_DIR = range(6)


def make_rng(seed, *stream):
    """Philox generator for the stream ``(seed, *stream)``."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def _blocked_normal(seed, tag, rows, n):
    parts = []
    for b, start in enumerate(range(0, n, BLOCK)):
        m = min(BLOCK, n - start)
        parts.append(make_rng(seed, tag, b).standard_normal((rows, m)))
    return np.concatenate(parts, axis=1) if parts else np.zeros((rows, 0))


def _blocked_uniform(seed, tag, n):
    parts = [make_rng(seed, tag, b).random(min(BLOCK, n - s)) for b, s in enumerate(range(0, n, BLOCK))]
    return np.concatenate(parts) if parts else np.zeros(0)


def sample_subspace(D, d, rng):
    """Uniformly random d-subspace of R^D (QR of a Gaussian matrix with the R-diagonal made positive)."""
    if not 1 <= d <= D:
        raise DimensionError(f"need 1 <= d <= D, got d={d}, D={D}")
    Q, R = np.linalg.qr(rng.standard_normal((D, d)))
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def perturb_subspace(base, angles, rng):
    """A subspace whose principal angles to ``span(base)`` are ``angles``.

    Column ``i`` of the result is ``cos(t_i) u_i + sin(t_i) w_i`` with the
    ``w_i`` a random orthonormal set in the complement of ``base``.
    """
    U = as_basis(base)
    D, d = U.shape
    t = np.asarray(angles, dtype=float).ravel()
    if t.shape != (d,):
        raise InfeasibleAngles(f"need {d} angles, got {t.size}")
    if np.any(t < 0) or np.any(t > np.pi / 2) or np.any(np.diff(t) > 0):
        raise InfeasibleAngles("angles must lie in [0, pi/2] in non-increasing order")
    k = int(np.count_nonzero(t))
    if k > D - d:
        raise InfeasibleAngles(f"{k} nonzero angles need a complement of dimension >= {k}, have {D - d}")
    if k == 0:
        return U.copy()
    W = complement_basis(U) @ sample_subspace(D - d, k, rng)
    V = U * np.cos(t)
    V[:, :k] += W * np.sin(t[:k])
    return V


@dataclass
class HaystackParams:
    """Generalized haystack model.

    ``inlier_spectrum`` holds the d eigenvalues of the inlier covariance on
    L* (default all ones) and ``outlier_covariance`` is the D x D matrix
    whose D-th fraction is the outlier covariance (default identity).
    """

    n1: int
    n0: int
    d: int
    D: int
    inlier_spectrum: Optional[Sequence[float]] = None
    outlier_covariance: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.d < self.D:
            raise DimensionError(f"need 1 <= d < D, got d={self.d}, D={self.D}")
        if self.n1 < 0 or self.n0 < 0 or self.n1 + self.n0 == 0:
            raise ValueError("need non-negative counts with n1 + n0 > 0")
        spec = np.ones(self.d) if self.inlier_spectrum is None else np.asarray(self.inlier_spectrum, float)
        if spec.shape != (self.d,) or np.any(spec <= 0):
            raise ValueError("inlier_spectrum must hold d positive values")
        self.inlier_spectrum = spec
        if self.outlier_covariance is not None:
            S = np.asarray(self.outlier_covariance, float)
            if S.shape != (self.D, self.D):
                raise DimensionError(f"outlier_covariance must be {self.D}x{self.D}")
            self.outlier_covariance = 0.5 * (S + S.T)


def outlier_covariance(basis, cross=0.0, spectrum=None):
    """Outlier covariance with a controllable (L*, L*-perp) block.

    In the coordinates ``[U | W]`` (``W`` the complement basis) the matrix is
    ``S^{1/2} [[I, c B], [c B^T, I]] S^{1/2}`` where ``B`` is the
    ``d x (D-d)`` partial identity, ``c = cross`` and ``S = diag(spectrum)``.
    Positive definite iff ``|cross| < 1``.
    """
    U = as_basis(basis)
    D, d = U.shape
    if not abs(cross) < 1:
        raise NotPD("|cross| must be < 1")
    spec = np.ones(D) if spectrum is None else np.asarray(spectrum, float)
    if spec.shape != (D,) or np.any(spec <= 0):
        raise ValueError("spectrum must hold D positive values")
    M = np.eye(D)
    k = min(d, D - d)
    for i in range(k):
        M[i, d + i] = M[d + i, i] = cross
    r = np.sqrt(spec)
    M = r[:, None] * M * r[None, :]
    Q = np.hstack([U, complement_basis(U)])
    S = Q @ M @ Q.T
    return 0.5 * (S + S.T)


def gen_haystack(params: HaystackParams, basis=None):
    """Draw a generalized haystack dataset.

    Returns ``(Dataset, GroundTruth)``. Inliers are ``U z`` with
    ``z ~ N(0, diag(spectrum)/d)``, outliers ``N(0, Sigma_out/D)``, and the
    points are interleaved by a seeded permutation.
    """
    p = params
    U = sample_subspace(p.D, p.d, make_rng(p.seed, _BASIS)) if basis is None else as_basis(basis, p.D)
    if U.shape[1] != p.d:
        raise DimensionError(f"basis has {U.shape[1]} columns, expected {p.d}")
    Z = _blocked_normal(p.seed, _INLIERS, p.d, p.n1)
    inl = U @ (np.sqrt(p.inlier_spectrum / p.d)[:, None] * Z)
    G = _blocked_normal(p.seed, _OUTLIERS, p.D, p.n0)
    if p.outlier_covariance is None:
        out = G / np.sqrt(p.D)
    else:
        try:
            L = np.linalg.cholesky(p.outlier_covariance / p.D)
        except np.linalg.LinAlgError as exc:
            raise NotPD("outlier_covariance must be positive definite") from exc
        out = L @ G
    X = np.hstack([inl, out])
    labels = np.concatenate([np.ones(p.n1, bool), np.zeros(p.n0, bool)])
    order = make_rng(p.seed, _SHUFFLE).permutation(X.shape[1])
    X, labels = X[:, order], labels[order]
    return Dataset(X, labels), GroundTruth(U, labels.copy())


def apply_cone_noise(data: Dataset, truth: GroundTruth, epsilon, rng):
    """Tilt each inlier out of L* inside the cone of aperture ``epsilon``.

    Inlier ``x`` becomes ``P x + z`` with ``z`` in L*-perp, uniformly random
    direction and ``||z|| = u * epsilon * ||P x||``, ``u ~ U[0, 1]``.
    Outliers are untouched. ``epsilon = 0`` returns an unchanged copy.
    """
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    truth.check(data)
    labels = truth.labels
    X = data.points.copy()
    if epsilon > 0:
        U, W = truth.basis, truth.complement
        Xi = X[:, labels]
        P = U @ (U.T @ Xi)
        n = Xi.shape[1]
        g = rng.standard_normal((W.shape[1], n))
        g /= np.linalg.norm(g, axis=0)
        u = rng.random(n)
        X[:, labels] = P + W @ g * (u * epsilon * np.linalg.norm(P, axis=0))
    new_truth = GroundTruth(truth.basis, labels.copy(), noise_epsilon=float(epsilon))
    return Dataset(X, labels.copy()), new_truth


def noisy_haystack(params: HaystackParams, epsilon, basis=None):
    """:func:`gen_haystack` followed by cone noise drawn from the params' seed."""
    data, truth = gen_haystack(params, basis)
    return apply_cone_noise(data, truth, epsilon, make_rng(params.seed, _NOISE_MAG))


def init_identity(D):
    return np.eye(D)


def init_from_subspace(basis, alpha):
    """``U U^T + alpha I``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    U = as_basis(basis)
    return U @ U.T + alpha * np.eye(U.shape[0])


def init_from_tme(data, cfg: EstimatorConfig = EstimatorConfig()):
    """The TME solution, for use as an STE starting point."""
    res = tme_solve(data, cfg)
    if not res.converged:
        raise NotConverged(f"TME did not converge in {cfg.max_iter} iterations")
    return res.sigma_final
