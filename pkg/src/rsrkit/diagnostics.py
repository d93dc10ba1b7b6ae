"""Condition numbers, alignment statistics and recovery-condition checks.

Every quantity here takes the ground truth as input; nothing is estimated
from unlabelled data. Ratios with a vanishing denominator evaluate to
``math.inf`` instead of raising, so the condition checks are total.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import constants as tol
from .data import Dataset, GroundTruth
from .errors import (
    DegenerateSupport,
    DimensionError,
    InlierTMEFailed,
    InvalidDataset,
    RegimeViolation,
)
from .estimators import EstimatorConfig, projected_tme, robust_weights
from .spectral import as_basis, as_symmetric, blocks, eigvals, inv_sqrtm, schur_complement

INF = math.inf


def _ratio(num, den, scale=1.0):
    """``num / den`` with a denominator below ``ZERO_REL * scale`` giving inf."""
    if den <= tol.ZERO_REL * scale:
        return INF
    return float(num / den)


def _basis_of(truth):
    return truth.basis if isinstance(truth, GroundTruth) else as_basis(truth)


# ---------------------------------------------------------------------------
# sample-size ratios and the constants of the noiseless theory


def dssnr(n1, n0, d, D):
    """Dimension-scaled SNR ``(n1/d) / (n0/(D-d))``; infinite when there are no outliers."""
    if not 0 < d < D:
        raise DimensionError(f"need 0 < d < D, got d={d}, D={D}")
    if n1 < 0 or n0 < 0:
        raise ValueError("counts must be non-negative")
    if n0 == 0:
        return INF
    return (n1 / d) / (n0 / (D - d))


def constants(dssnr_value, gamma):
    """Return ``(C, C0)`` for the noiseless condition.

    Raises :class:`RegimeViolation` unless ``dssnr > gamma``.
    """
    s, g = float(dssnr_value), float(gamma)
    if not s > g:
        raise RegimeViolation(f"dssnr={s} must exceed gamma={g}")
    if math.isinf(s):
        return 70.0, 2.0  # limits of both expressions as dssnr -> inf
    C = max(70.0, (46.0 * s + 14.0 * g) / (s - g))
    C0 = 2.0 * s / (s + g)
    return C, C0


def condition_rhs(dssnr_value, gamma, kappa_in_star, A, R, kappa2, C=None):
    """Right-hand side of the initialization condition on kappa_1.

    ``C`` defaults to the noiseless constant; pass the noisy one to check
    the condition used by the noisy theory.
    """
    s, g = float(dssnr_value), float(gamma)
    if C is None:
        C = constants(s, g)[0]
    parts = (kappa_in_star, A, R, kappa2, C)
    if any(math.isinf(p) or math.isnan(p) for p in parts):
        return INF
    return C * (kappa_in_star * A / s) * (kappa_in_star + A / (s - g) + kappa2 * R * (1.0 + kappa_in_star) / g)


# ---------------------------------------------------------------------------
# initialization-dependent ratios


def kappa1(sigma0, truth):
    """Smallest eigenvalue of the Schur complement over the top eigenvalue of the L-perp block."""
    sigma0 = as_symmetric(sigma0, "sigma0")
    b = blocks(sigma0, _basis_of(truth))
    top_pp = eigvals(b.sigma_PP)[0]
    scale = eigvals(sigma0)[0]
    if top_pp <= tol.ZERO_REL * scale:
        return INF
    return float(eigvals(schur_complement(b))[-1] / top_pp)


def kappa2(sigma0, truth):
    sigma0 = as_symmetric(sigma0, "sigma0")
    b = blocks(sigma0, _basis_of(truth))
    vals = eigvals(sigma0)
    return _ratio(eigvals(b.sigma_PP)[0], vals[-1], vals[0])


def kappa3(sigma0, truth):
    sigma0 = as_symmetric(sigma0, "sigma0")
    b = blocks(sigma0, _basis_of(truth))
    S = schur_complement(b)
    return _ratio(eigvals(b.sigma_LL)[0], eigvals(S)[-1], eigvals(sigma0)[0])


def _labelled(data, truth):
    if isinstance(truth, GroundTruth):
        if data.labels is None:
            return truth.labelled(data)
        truth.check(data)
    if data.labels is None:
        raise InvalidDataset("dataset has no inlier/outlier labels")
    return data


def kappa_in_star(data, truth, cfg: EstimatorConfig = EstimatorConfig()):
    """Condition number of the TME of the projected inliers.

    :class:`InlierTMEFailed` propagates; callers that want the infinite
    convention catch it.
    """
    data = _labelled(data, truth)
    S = projected_tme(data, _basis_of(truth), cfg)
    vals = eigvals(S)
    return float(vals[0] / vals[-1])


# ---------------------------------------------------------------------------
# data statistics


def _outlier_moment(data, truth):
    """``sum_out x x^T / ||U_perp^T x||^2``, or None if an outlier lies in L*."""
    data = _labelled(data, truth)
    X = data.outliers
    if X.shape[1] == 0:
        raise InvalidDataset("dataset has no outliers")
    U = _basis_of(truth)
    resid = np.linalg.norm(X - U @ (U.T @ X), axis=0)
    if np.any(resid <= tol.MEMBERSHIP_TOL * np.linalg.norm(X, axis=0)):
        return None
    Y = X / resid
    M = Y @ Y.T
    return 0.5 * (M + M.T)


def alignment_A(data, truth):
    """Alignment statistic, scaled by ``(D - d) / n0``; at least 1 on every dataset."""
    M = _outlier_moment(data, truth)
    if M is None:
        return INF
    U = _basis_of(truth)
    D, d = U.shape
    n0 = _labelled(data, truth).n0
    return float((D - d) / n0 * eigvals(M)[0])


def S_stat(data, d):
    """Tail mean of ``sum_x x x^T / ||x||^2`` over its ``D - d`` smallest eigenvalues."""
    X = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    D = X.shape[0]
    if not 1 <= d < D:
        raise DimensionError(f"need 1 <= d < D, got d={d}, D={D}")
    Y = X / np.linalg.norm(X, axis=0)
    return float(eigvals(Y @ Y.T)[d:].mean())


def relative_alignment_R(data, truth):
    M = _outlier_moment(data, truth)
    if M is None:
        return INF
    d = _basis_of(truth).shape[1]
    return _ratio(eigvals(M)[0], S_stat(data, d))


# ---------------------------------------------------------------------------
# per-iterate quantities


class IterationDecomposition(NamedTuple):
    sigma_plus_in: np.ndarray
    sigma_plus_out: np.ndarray
    nu: float


def nu_decomposition(sigma, data, truth, cfg: EstimatorConfig = EstimatorConfig()):
    """Split the unnormalized weighted scatter at ``sigma`` by label and return the dominance ratio."""
    data = _labelled(data, truth)
    w = robust_weights(sigma, data, cfg.ridge_rel, cfg.exact_rank)
    X = data.points
    lab = data.labels
    Xi, wi = X[:, lab], w[lab]
    Xo, wo = X[:, ~lab], w[~lab]
    S_in = (Xi * wi) @ Xi.T
    S_out = (Xo * wo) @ Xo.T
    S_in = 0.5 * (S_in + S_in.T)
    S_out = 0.5 * (S_out + S_out.T)
    d = _basis_of(truth).shape[1]
    top_out = eigvals(S_out)[0] if Xo.shape[1] else 0.0
    scale = max(eigvals(S_in)[0], top_out, np.finfo(float).tiny)
    nu = _ratio(eigvals(S_in)[d - 1], top_out, scale)
    return IterationDecomposition(S_in, S_out, nu)


def pp_ratio(sigma, truth):
    """``sigma_1(Sigma_PP) / sigma_1(Sigma)``: how much of the iterate is left outside L*."""
    sigma = as_symmetric(sigma, "sigma")
    b = blocks(sigma, _basis_of(truth))
    return float(eigvals(b.sigma_PP)[0] / eigvals(sigma)[0])


def hat_kappas(sigma, truth, sigma_in_star):
    """Return ``(kappa1_hat, kappa2_hat, kappa3_hat)`` for an iterate ``sigma``.

    The L-block quantities are measured after the congruence
    ``X -> S^{-1/2} X S^{-1/2}`` with ``S = sigma_in_star``.
    """
    sigma = as_symmetric(sigma, "sigma")
    b = blocks(sigma, _basis_of(truth))
    W = inv_sqrtm(as_symmetric(sigma_in_star, "sigma_in_star"))

    def phi(X):
        return W @ X @ W

    vals = eigvals(sigma)
    scale = vals[0]
    top_pp = eigvals(b.sigma_PP)[0]
    h = eigvals(phi(schur_complement(b)))[-1]
    k1 = _ratio(h, top_pp, scale)
    k2 = _ratio(top_pp, vals[-1], scale)
    phi_scale = eigvals(phi(b.sigma_LL))[0]
    k3 = _ratio(phi_scale, h, phi_scale)
    return k1, k2, k3


# ---------------------------------------------------------------------------
# the report


@dataclass
class DiagnosticsReport:
    dssnr: float
    kappa1: float
    kappa2: float
    kappa3: float
    kappa_in_star: float
    A_stat: float
    R_stat: float
    S_stat: float
    C: float
    C0: float
    condition_rhs: float
    condition_margin: float

    def to_dict(self):
        return {k: _encode(v) for k, v in asdict(self).items()}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, obj):
        names = [f.name for f in fields(cls)]
        missing = set(names) - set(obj)
        if missing:
            raise ValueError(f"missing report fields: {sorted(missing)}")
        return cls(**{k: _decode(obj[k]) for k in names})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _encode(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _decode(v):
    return float(v)  # float("inf") and float("-inf") parse the markers


def _margin(k1, rhs):
    if math.isinf(rhs):
        return -INF
    return k1 - rhs  # inf when kappa1 is inf


def tilde_kappa1(report: DiagnosticsReport, sigma_in_star):
    """Scaled threshold; the condition holds iff ``kappa1 / sigma_1(sigma_in_star) >= tilde_kappa1``."""
    r = report
    parts = (r.A_stat, r.R_stat, r.kappa2, r.kappa_in_star)
    if any(math.isinf(p) for p in parts):
        return INF
    sd = eigvals(sigma_in_star)[-1]
    gamma = r.dssnr * (2.0 - r.C0) / r.C0  # invert C0 = 2s / (s + g)
    return r.C * r.A_stat / (r.dssnr * sd) * (
        r.kappa_in_star + r.A_stat / (r.dssnr - gamma) + r.kappa2 * r.R_stat / gamma * (1.0 + r.kappa_in_star)
    )


def _report(sigma0, data, truth, gamma, cfg, C=None):
    data = _labelled(data, truth)
    U = _basis_of(truth)
    D, d = U.shape
    s = dssnr(data.n1, data.n0, d, D)
    C_main, C0 = constants(s, gamma)
    C = C_main if C is None else C
    try:
        kin = kappa_in_star(data, truth, cfg)
    except InlierTMEFailed:
        kin = INF
    k1 = kappa1(sigma0, U)
    k2 = kappa2(sigma0, U)
    k3 = kappa3(sigma0, U)
    A = alignment_A(data, truth)
    R = relative_alignment_R(data, truth)
    S = S_stat(data, d)
    rhs = condition_rhs(s, gamma, kin, A, R, k2, C=C)
    return DiagnosticsReport(
        dssnr=s, kappa1=k1, kappa2=k2, kappa3=k3, kappa_in_star=kin,
        A_stat=A, R_stat=R, S_stat=S, C=C, C0=C0,
        condition_rhs=rhs, condition_margin=_margin(k1, rhs),
    )


def check_main_condition(sigma0, data, truth, gamma, cfg: EstimatorConfig = EstimatorConfig()):
    """Evaluate the noiseless initialization condition.

    Returns ``(satisfied, margin, report)`` with ``margin = kappa1 - rhs``.
    An infinite right-hand side (for instance a failed inlier TME) gives
    ``margin = -inf``.
    """
    rep = _report(sigma0, data, truth, gamma, cfg)
    return rep.condition_margin >= 0, rep.condition_margin, rep


# ---------------------------------------------------------------------------
# noisy regime


@dataclass(frozen=True)
class NoisyConstants:
    C_noisy: float
    C_kappa1: float
    C_kappa2: float
    C_kappa3: float
    C_E_estimate: float


def noisy_constants_from(dssnr_value, gamma, epsilon, c_e, kappa_in_star, n1, n0, d, D):
    """Literal evaluation of the noisy-theory constants from scalar inputs."""
    s, g, eps = float(dssnr_value), float(gamma), float(epsilon)
    if not s > g:
        raise RegimeViolation(f"dssnr={s} must exceed gamma={g}")
    if not 0 < eps <= 0.5:
        raise ValueError(f"epsilon must lie in (0, 1/2], got {eps}")
    if not 0 < c_e <= 1:
        raise ValueError(f"C_E must lie in (0, 1], got {c_e}")
    head = 3340.0 / c_e
    body = 152.0 * (s + g) / (2.0 * g) + 16.0 * (s + 2.0 * g) ** 2 / (3.0 * g) ** 2 * (s + g)
    denom = 1.0 - 2.0 * (s + 2.0 * g) / (3.0 * (s + g))
    C = head + body / denom
    c2 = 7.0
    c3 = 13.0 * kappa_in_star + 1.0
    gap = s / g - 1.0
    first = (min(gap, 1.0, c_e / 2.0)) ** 2 / (eps * c2)
    second = n0 / (n1 * (D - d)) * min(gap, 1.0)
    c1 = min(first, second) / (100.0 * eps * c3)
    return NoisyConstants(C_noisy=C, C_kappa1=c1, C_kappa2=c2, C_kappa3=c3, C_E_estimate=float(c_e))


def noisy_constants(data, truth, gamma, epsilon, c_e=None, cfg: EstimatorConfig = EstimatorConfig(),
                    trials=1000, rng=None):
    """Noisy-theory constants for a labelled dataset.

    ``c_e`` defaults to :func:`estimate_C_E` on the projected inliers with
    ``trials`` candidate directions.
    """
    data = _labelled(data, truth)
    U = _basis_of(truth)
    D, d = U.shape
    s = dssnr(data.n1, data.n0, d, D)
    S_in = projected_tme(data, U, cfg)
    vals = eigvals(S_in)
    kin = float(vals[0] / vals[-1])
    if c_e is None:
        rng = np.random.default_rng(0) if rng is None else rng
        c_e = estimate_C_E(U.T @ data.inliers, S_in, trials, rng)
    return noisy_constants_from(s, gamma, epsilon, c_e, kin, data.n1, data.n0, d, D)


def check_noisy_condition(sigma0, data, truth, gamma, epsilon, c_e=None,
                          cfg: EstimatorConfig = EstimatorConfig(), trials=1000, rng=None):
    """Noisy-theory version of :func:`check_main_condition`.

    Uses the noisy constant ``C`` and also requires ``kappa2 <= C_kappa2``
    and ``kappa3 <= C_kappa3 / kappa_in_star``. Returns
    ``(satisfied, margin, report, constants)``; the report's ``C`` field
    holds the noisy constant.
    """
    nc = noisy_constants(data, truth, gamma, epsilon, c_e, cfg, trials, rng)
    rep = _report(sigma0, data, truth, gamma, cfg, C=nc.C_noisy)
    ok = (
        rep.condition_margin >= 0
        and rep.kappa2 <= nc.C_kappa2
        and rep.kappa3 <= nc.C_kappa3 / rep.kappa_in_star
    )
    return ok, rep.condition_margin, rep, nc


def estimate_C_E(projected_inliers, sigma_in_star, trials, rng):
    """Heuristic estimate of the expansion constant of the inlier TME.

    The inliers (coordinates in L*) are whitened by ``sigma_in_star`` and
    put on the unit sphere, so the fixed point becomes the identity. For a
    unit direction ``v`` the candidate value is
    ``sigma_d(sum_y (y.v)^2 y y^T) * d / n``; the estimate is the smallest
    value over ``trials`` candidates, clamped to ``(0, 1]``. Candidates
    alternate between Gaussian directions and normals of random
    ``(d-1)``-subsets of the data, the latter being where the value drops
    to zero for data on two hyperplanes.

    This is an upper estimate of the true uniform constant (a minimum over
    finitely many directions), not a certified bound.
    """
    Y = projected_inliers.points if isinstance(projected_inliers, Dataset) else np.asarray(projected_inliers, float)
    d, n = Y.shape
    if n == 0:
        raise InvalidDataset("no inliers")
    if trials < 1:
        raise ValueError("trials must be positive")
    Y = inv_sqrtm(as_symmetric(sigma_in_star, "sigma_in_star")) @ Y
    Y = Y / np.linalg.norm(Y, axis=0)
    best = INF
    for t in range(trials):
        if d > 1 and t % 2 == 1 and n >= d - 1:
            idx = rng.choice(n, size=d - 1, replace=False)
            # normal of span(Y[:, idx]) is the last left singular vector
            v = np.linalg.svd(Y[:, idx], full_matrices=True)[0][:, -1]
        else:
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
        proj = (v @ Y) ** 2
        M = (Y * proj) @ Y.T
        value = eigvals(M)[-1] * d / n
        best = min(best, value)
    if best <= tol.C_E_DEGENERATE:
        raise DegenerateSupport(f"expansion estimate {best:.3e}: inliers concentrate on two hyperplanes")
    return float(min(best, 1.0))
