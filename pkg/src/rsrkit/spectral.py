"""Dense symmetric linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays. A subspace basis is a ``(D, d)`` array
with orthonormal columns; it is only meaningful up to right multiplication
by a ``d x d`` orthogonal matrix, and every function here is invariant to
that choice.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import constants as tol
from .errors import (
    DegenerateSpectrumWarning,
    DimensionError,
    InvalidMatrix,
    NotPD,
    NotPSD,
)


class EigenSystem(NamedTuple):
    values: np.ndarray   # non-increasing
    vectors: np.ndarray  # vectors[:, i] pairs with values[i]


@dataclass(frozen=True)
class BlockDecomposition:
    sigma_LL: np.ndarray
    sigma_LP: np.ndarray
    sigma_PL: np.ndarray
    sigma_PP: np.ndarray
    basis: np.ndarray
    complement: np.ndarray


def as_symmetric(M, name="matrix"):
    """Validate a square, finite, symmetric matrix and return it as float64."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidMatrix(f"{name} has non-finite entries")
    scale = 1.0 + (np.abs(M).max() if M.size else 0.0)
    if np.abs(M - M.T).max(initial=0.0) > tol.SYMMETRY_TOL * scale:
        raise InvalidMatrix(f"{name} is not symmetric")
    return M


def as_basis(U, ambient_dim=None):
    """Validate an orthonormal ``(D, d)`` basis."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.ndim != 2 or U.shape[1] < 1 or U.shape[1] > U.shape[0]:
        raise DimensionError(f"basis must be D x d with 1 <= d <= D, got {U.shape}")
    if ambient_dim is not None and U.shape[0] != ambient_dim:
        raise DimensionError(f"basis lives in R^{U.shape[0]}, expected R^{ambient_dim}")
    gram = U.T @ U
    if np.abs(gram - np.eye(U.shape[1])).max() > tol.ORTHO_TOL:
        raise InvalidMatrix("basis columns are not orthonormal")
    return U


def _fix_signs(V):
    # largest-magnitude entry of each column made positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def eigh(M) -> EigenSystem:
    """Eigendecomposition with non-increasing eigenvalues and fixed signs."""
    M = as_symmetric(M)
    M = 0.5 * (M + M.T)
    values, vectors = np.linalg.eigh(M)
    return EigenSystem(values[::-1].copy(), _fix_signs(vectors[:, ::-1]))


def eigvals(M):
    """Eigenvalues of a symmetric matrix in non-increasing order."""
    M = np.asarray(M, dtype=float)
    return np.linalg.eigvalsh(0.5 * (M + M.T))[::-1]


def sigma(M, i):
    """The i-th largest eigenvalue, 1-based as in sigma_1 >= ... >= sigma_D."""
    return float(eigvals(M)[i - 1])


def complement_basis(U):
    """Orthonormal basis of the orthogonal complement of ``span(U)``.

    Deterministic given ``U``: the trailing columns of a complete QR.
    """
    U = as_basis(U)
    D, d = U.shape
    Q, _ = np.linalg.qr(U, mode="complete")
    W = Q[:, d:]
    # one re-orthogonalisation pass against U keeps |U^T W| at rounding level
    W = W - U @ (U.T @ W)
    W, _ = np.linalg.qr(W)
    return W


def projector(U):
    U = np.asarray(U, dtype=float)
    return U @ U.T


def blocks(M, U) -> BlockDecomposition:
    """Split ``M`` into blocks relative to ``span(U)`` and its complement."""
    M = as_symmetric(M)
    U = as_basis(U)
    if U.shape[0] != M.shape[0]:
        raise DimensionError(f"basis is {U.shape[0]}-dimensional, matrix is {M.shape[0]}x{M.shape[0]}")
    W = complement_basis(U)
    MU, MW = M @ U, M @ W
    return BlockDecomposition(
        sigma_LL=U.T @ MU,
        sigma_LP=U.T @ MW,
        sigma_PL=W.T @ MU,
        sigma_PP=W.T @ MW,
        basis=U,
        complement=W,
    )


def _check_psd(M, name="matrix"):
    vals = eigvals(M)
    if vals.size and vals[-1] < -tol.PSD_TOL * (1.0 + abs(vals[0])):
        raise NotPSD(f"{name} has eigenvalue {vals[-1]:.3e} < 0")
    return vals


def _floored_eigh(M, floor):
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    top = max(vals.max(initial=0.0), 0.0)
    fl = max(floor, tol.SCHUR_FLOOR_REL * top)
    clamped = np.maximum(vals, fl)
    inv = np.zeros_like(clamped)
    pos = clamped > 0
    inv[pos] = 1.0 / clamped[pos]
    return inv, vecs


def floored_inverse(M, floor=0.0):
    """Inverse of a PSD matrix after clamping its eigenvalues at ``floor``.

    Eigenvalues that are still zero after clamping (``floor == 0``) are
    dropped, which is the limit of ``(M + eps I)^{-1}`` restricted to the
    range of ``M``.
    """
    inv, vecs = _floored_eigh(M, floor)
    return (vecs * inv) @ vecs.T


def schur_complement(b: BlockDecomposition, floor=0.0):
    """``Sigma_LL - Sigma_LP Sigma_PP^{-1} Sigma_PL`` as a ``d x d`` matrix.

    For a well-conditioned PD input (and no explicit floor) this is computed
    as ``((Sigma^{-1})_LL)^{-1}``, which avoids the cancellation in the
    subtraction when the complement is small relative to ``Sigma_LL``.
    """
    d = b.sigma_LL.shape[0]
    if floor == 0.0:
        inner = np.block([[b.sigma_LL, b.sigma_LP], [b.sigma_PL, b.sigma_PP]])
        vals, vecs = np.linalg.eigh(0.5 * (inner + inner.T))
        if vals[0] > tol.SCHUR_DIRECT_COND * vals[-1]:
            top = vecs[:d]
            inv_ll = (top / vals) @ top.T
            lv, lq = np.linalg.eigh(0.5 * (inv_ll + inv_ll.T))
            S = (lq / lv) @ lq.T
            return 0.5 * (S + S.T)
    # Keep the inverse factored: forming it explicitly lets rounding of the
    # huge clamped entries swamp the range part when Sigma_PP is singular.
    inv, vecs = _floored_eigh(b.sigma_PP, floor)
    B = b.sigma_LP @ vecs
    S = b.sigma_LL - (B * inv) @ B.T
    return 0.5 * (S + S.T)


def schur_split(M, U, floor=0.0):
    """Return ``(g1, g2)`` with ``g1 + g2 = M``.

    ``g1`` is zero outside the ``(L, L)`` block, where it holds the Schur
    complement of the ``(L-perp, L-perp)`` block. Both are PSD for PSD ``M``.
    """
    if floor < 0:
        raise ValueError("floor must be non-negative")
    M = as_symmetric(M)
    _check_psd(M)
    b = blocks(M, U)
    S = schur_complement(b, floor)
    g1 = b.basis @ S @ b.basis.T
    g1 = 0.5 * (g1 + g1.T)
    return g1, M - g1


def tail_mean(M, d):
    """Average of the ``D - d`` smallest eigenvalues of ``M``."""
    vals = eigvals(M)
    if not 1 <= d < vals.size:
        raise DimensionError(f"need 1 <= d < D, got d={d}, D={vals.size}")
    return float(vals[d:].mean())


def rank_d_truncation(M, d):
    """Return ``(Pi_d(M), P_tail(M))``.

    ``Pi_d`` keeps the top ``d`` eigenpairs; ``P_tail`` projects onto the
    remaining eigenvectors. Emits :class:`DegenerateSpectrumWarning` when
    ``sigma_d == sigma_{d+1}``.
    """
    values, vectors = eigh(M)
    D = values.size
    if not 1 <= d < D:
        raise DimensionError(f"need 1 <= d < D, got d={d}, D={D}")
    warn_if_degenerate(values, d)
    top = vectors[:, :d]
    rest = vectors[:, d:]
    return (top * values[:d]) @ top.T, rest @ rest.T


def warn_if_degenerate(values, d):
    scale = max(abs(values[0]), np.finfo(float).tiny)
    if values[d - 1] - values[d] <= tol.DEGENERATE_GAP_REL * scale:
        warnings.warn(
            f"sigma_{d} and sigma_{d + 1} coincide; the top-{d} subspace is ill-defined",
            DegenerateSpectrumWarning,
            stacklevel=3,
        )
        return True
    return False


def top_subspace(M, d):
    """Orthonormal basis of the span of the top ``d`` eigenvectors."""
    return eigh(M).vectors[:, :d]


def principal_angles(U1, U2):
    """Principal angles between ``span(U1)`` and ``span(U2)``, largest first.

    Cosines come from the singular values of ``U1^T U2`` and sines from those
    of ``(I - U1 U1^T) U2``; pairing them through ``arctan2`` keeps small
    angles accurate, where ``arccos`` alone loses everything below ~1e-8.
    """
    U1 = as_basis(U1)
    U2 = as_basis(U2)
    if U1.shape != U2.shape:
        raise DimensionError(f"bases have shapes {U1.shape} and {U2.shape}")
    C = U1.T @ U2
    cos = np.linalg.svd(C, compute_uv=False)           # descending
    sin = np.linalg.svd(U2 - U1 @ C, compute_uv=False)  # descending
    cos = np.clip(cos[::-1], 0.0, 1.0)                  # ascending, pairs with sin
    sin = np.clip(sin, 0.0, 1.0)
    return np.arctan2(sin, cos)


def sin_largest_angle(U1, U2):
    """``sin`` of the largest principal angle."""
    U1 = as_basis(U1)
    U2 = as_basis(U2)
    if U1.shape != U2.shape:
        raise DimensionError(f"bases have shapes {U1.shape} and {U2.shape}")
    return float(min(np.linalg.norm(U2 - U1 @ (U1.T @ U2), 2), 1.0))


def _sqrt_and_invsqrt(A):
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    if vals[0] <= 0:
        raise NotPD(f"matrix has eigenvalue {vals[0]:.3e} <= 0")
    r = np.sqrt(vals)
    return (vecs * r) @ vecs.T, (vecs / r) @ vecs.T


def sqrtm_psd(A):
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def inv_sqrtm(A):
    return _sqrt_and_invsqrt(A)[1]


def geometric_mean(A, B):
    """Matrix geometric mean ``A # B = A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}``."""
    A = as_symmetric(A, "A")
    B = as_symmetric(B, "B")
    if A.shape != B.shape:
        raise DimensionError(f"shapes differ: {A.shape} vs {B.shape}")
    _sqrt_and_invsqrt(B)  # PD check
    Ah, Aih = _sqrt_and_invsqrt(A)
    inner = Aih @ B @ Aih
    G = Ah @ sqrtm_psd(inner) @ Ah
    return 0.5 * (G + G.T)
