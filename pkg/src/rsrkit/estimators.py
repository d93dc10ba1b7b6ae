"""Tyler's M-estimator (TME) and the subspace-constrained variant (STE)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import constants as K
from .data import Dataset
from .errors import DegenerateUpdate, DimensionError, InlierTMEFailed, InvalidDataset, NotPSD
from .spectral import eigh, eigvals, sin_largest_angle, warn_if_degenerate


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings shared by the TME and STE iterations.

    Parameters
    ----------
    d : int
        Target subspace dimension (STE only; TME ignores it).
    gamma : float
        STE shrinkage applied to the mean tail eigenvalue, in (0, 1).
    tol : float
        Stop once the spectral norm of the change between consecutive
        trace-normalised iterates drops to ``tol``.
    max_iter : int
    trace_normalize : bool
        Rescale every iterate to unit trace. The top-d subspaces do not
        depend on this.
    ridge_rel : float
        Eigenvalues of the current iterate are floored at
        ``ridge_rel * sigma_1`` before inverting it for the weights.
    exact_rank : bool
        Instead of flooring, treat tiny eigenvalues as exact zeros: a point
        with a component outside the range gets weight 0.
    """

    d: int = 1
    gamma: float = 0.5
    tol: float = K.DEFAULT_TOL
    max_iter: int = K.DEFAULT_MAX_ITER
    trace_normalize: bool = True
    ridge_rel: float = K.DEFAULT_RIDGE_REL
    exact_rank: bool = False

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.d < 1:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.tol < 0 or self.ridge_rel < 0:
            raise ValueError("tol and ridge_rel must be non-negative")


@dataclass
class IterationRecord:
    k: int
    step_delta: float
    sin_theta1: Optional[float] = None
    kappa1_hat: Optional[float] = None
    kappa2_hat: Optional[float] = None
    kappa3_hat: Optional[float] = None
    # sigma_1 of the (L-perp, L-perp) block over sigma_1; kappa-hats saturate as it nears rounding level
    pp_ratio: Optional[float] = None
    wall_time: float = 0.0


@dataclass
class IterationTrace:
    records: List[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        if self.records and record.k <= self.records[-1].k:
            raise ValueError("iteration indices must increase")
        if not record.step_delta >= 0:
            raise ValueError("step_delta must be non-negative")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records],
            dtype=float,
        )


@dataclass
class EstimatorResult:
    sigma_final: np.ndarray
    subspace: np.ndarray
    iterations: int
    converged: bool
    trace: IterationTrace


def _points(data) -> np.ndarray:
    X = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise InvalidDataset(f"points must be a D x N array, got shape {X.shape}")
    return X


def robust_weights(sigma, data, ridge_rel=K.DEFAULT_RIDGE_REL, exact_rank=False):
    """Weights ``1 / (x_i^T Sigma^{-1} x_i)`` for every point.

    With ``exact_rank`` the inverse is taken on the range of ``sigma`` and
    points with a component outside that range get weight 0; otherwise the
    eigenvalues of ``sigma`` are floored at ``ridge_rel * sigma_1``.
    """
    X = _points(data)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (X.shape[0], X.shape[0]):
        raise DimensionError(f"sigma is {sigma.shape}, points live in R^{X.shape[0]}")
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise InvalidDataset(f"point {int(np.argmin(norms))} is zero")
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    top = vals[-1]
    if top <= 0 or vals[0] < -K.PSD_TOL * (1.0 + abs(top)):
        raise NotPSD("sigma must be PSD and nonzero")
    Y = vecs.T @ X
    if exact_rank:
        keep = vals > K.SCHUR_FLOOR_REL * top
        q = (Y[keep] ** 2 / vals[keep, None]).sum(axis=0)
        outside = np.sqrt((Y[~keep] ** 2).sum(axis=0))
        w = np.zeros(X.shape[1])
        inside = outside <= K.MEMBERSHIP_TOL * norms
        w[inside] = 1.0 / q[inside]
        return w
    floored = np.maximum(vals, ridge_rel * top)
    floored = np.where(floored > 0, floored, top * np.finfo(float).eps)
    q = (Y ** 2 / floored[:, None]).sum(axis=0)
    return 1.0 / q


def _weighted_scatter(X, w):
    S = (X * w) @ X.T
    return 0.5 * (S + S.T)


def _normalize(S):
    t = np.trace(S)
    if not t > 0:
        raise DegenerateUpdate("update has non-positive trace")
    return S / t


def tme_step(sigma, data, cfg: EstimatorConfig = EstimatorConfig()):
    """One TME update ``(D/N) sum_i w_i x_i x_i^T``."""
    X = _points(data)
    D, N = X.shape
    w = robust_weights(sigma, X, cfg.ridge_rel, cfg.exact_rank)
    S = (D / N) * _weighted_scatter(X, w)
    if not np.any(w > 0) or not np.abs(S).max() > 0:
        raise DegenerateUpdate("all weights vanished")
    return _normalize(S) if cfg.trace_normalize else S


def ste_step(sigma, data, cfg: EstimatorConfig):
    """One STE update: weighted scatter, keep top-d, shrink the tail to ``gamma`` times its mean."""
    X = _points(data)
    D = X.shape[0]
    if not 1 <= cfg.d < D:
        raise DimensionError(f"need 1 <= d < D, got d={cfg.d}, D={D}")
    w = robust_weights(sigma, X, cfg.ridge_rel, cfg.exact_rank)
    if not np.any(w > 0):
        raise DegenerateUpdate("all weights vanished")
    Z = _weighted_scatter(X, w)
    return _truncate_shrink(Z, cfg)


def _truncate_shrink(Z, cfg):
    values, vectors = eigh(Z)
    d = cfg.d
    warn_if_degenerate(values, d)
    top = vectors[:, :d]
    tail = values[d:].mean()
    S = (top * values[:d]) @ top.T + cfg.gamma * tail * (np.eye(Z.shape[0]) - top @ top.T)
    S = 0.5 * (S + S.T)
    return _normalize(S) if cfg.trace_normalize else S


def _start(sigma0, D):
    if sigma0 is None:
        return np.eye(D)
    sigma0 = np.asarray(sigma0, dtype=float)
    if sigma0.shape != (D, D):
        raise DimensionError(f"sigma0 is {sigma0.shape}, expected {(D, D)}")
    vals = eigvals(sigma0)
    if vals[-1] <= 0:
        raise NotPSD("sigma0 must be positive definite")
    return sigma0


def _iterate(step, X, cfg, sigma0, d_out, reference=None, monitor=None):
    D = X.shape[0]
    S = _start(sigma0, D)
    if cfg.trace_normalize:
        S = S / np.trace(S)
    trace = IterationTrace()
    t0 = time.perf_counter()

    def record(k, delta, S):
        rec = IterationRecord(k=k, step_delta=delta)
        if reference is not None:
            rec.sin_theta1 = sin_largest_angle(reference, eigh(S).vectors[:, : reference.shape[1]])
        if monitor is not None:
            rec.kappa1_hat, rec.kappa2_hat, rec.kappa3_hat, rec.pp_ratio = monitor(S)
        rec.wall_time = time.perf_counter() - t0
        trace.append(rec)

    record(0, 0.0, S)
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        S_new = step(S, X, cfg)
        delta = float(np.linalg.norm(S_new / np.trace(S_new) - S / np.trace(S), 2))
        S = S_new
        record(k, delta, S)
        if delta <= cfg.tol:
            converged = True
            break
    return EstimatorResult(
        sigma_final=S,
        subspace=eigh(S).vectors[:, :d_out],
        iterations=k,
        converged=converged,
        trace=trace,
    )


def tme_solve(data, cfg: EstimatorConfig = EstimatorConfig(), sigma0=None, reference=None):
    """Iterate :func:`tme_step` from ``sigma0`` (identity by default).

    Non-convergence is reported through ``converged=False`` rather than an
    exception; the TME solution need not exist when the data concentrate
    on a subspace. ``subspace`` holds the top ``cfg.d`` eigenvectors.
    """
    X = _points(data)
    d = min(cfg.d, X.shape[0])
    return _iterate(tme_step, X, cfg, sigma0, d, reference=reference)


def ste_solve(data, cfg: EstimatorConfig, sigma0=None, reference=None, sigma_in_star=None):
    """Iterate :func:`ste_step` from ``sigma0`` (identity by default).

    When ``reference`` (a basis of the true subspace) is given, the trace
    records the sine of the largest principal angle to it at every
    iteration; if ``sigma_in_star`` is given as well, the kappa-hat
    diagnostics are recorded too.
    """
    X = _points(data)
    if not 1 <= cfg.d < X.shape[0]:
        raise DimensionError(f"need 1 <= d < D, got d={cfg.d}, D={X.shape[0]}")
    monitor = None
    if reference is not None and sigma_in_star is not None:
        from .diagnostics import hat_kappas, pp_ratio

        def _monitor(S):
            return (*hat_kappas(S, reference, sigma_in_star), pp_ratio(S, reference))

        monitor = _monitor

    return _iterate(ste_step, X, cfg, sigma0, cfg.d, reference=reference, monitor=monitor)


def tme_residual(sigma, data, cfg: EstimatorConfig = EstimatorConfig()):
    """Spectral norm of ``Sigma - (D/N) sum x x^T / (x^T Sigma^{-1} x)`` at unit trace."""
    S = np.asarray(sigma, dtype=float)
    S = S / np.trace(S)
    X = _points(data)
    D, N = X.shape
    w = robust_weights(S, X, cfg.ridge_rel, cfg.exact_rank)
    return float(np.linalg.norm(S - (D / N) * _weighted_scatter(X, w), 2))


def projected_tme(data: Dataset, basis, cfg: EstimatorConfig = EstimatorConfig()):
    """TME solution of the inliers projected onto ``basis``, scaled to unit trace.

    Raises :class:`InlierTMEFailed` if the iteration does not converge or
    the limit is numerically singular.
    """
    basis = np.asarray(basis, dtype=float)
    Y = basis.T @ data.inliers
    d = Y.shape[0]
    if Y.shape[1] == 0:
        raise InlierTMEFailed("no inliers")
    sub_cfg = replace(cfg, d=1, trace_normalize=True, exact_rank=False)
    try:
        res = tme_solve(Y, sub_cfg)
    except DegenerateUpdate as exc:
        raise InlierTMEFailed(str(exc)) from exc
    S = res.sigma_final / np.trace(res.sigma_final)
    vals = eigvals(S)
    if not res.converged:
        raise InlierTMEFailed(f"inlier TME did not converge in {cfg.max_iter} iterations")
    if d > 1 and vals[-1] < K.INLIER_TME_MIN_COND * vals[0]:
        raise InlierTMEFailed("inlier TME solution is singular")
    return 0.5 * (S + S.T)
