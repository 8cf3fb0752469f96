"""Numerical kernels for the constrained block updates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Relative threshold below which the R-th singular value counts as degenerate.
DEGENERACY_RTOL = 1e-12
# Relative threshold for treating two vectors as collinear.
COLLINEAR_RTOL = 1e-12


class UniquenessWarning(RuntimeWarning):
    """The maximizer of a block update is not unique (rank-deficient input)."""


class NotSPDError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TruncatedSvd:
    left: np.ndarray
    singular: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular) @ self.right.T


# Entries within this relative distance of the largest magnitude count as ties.
SIGN_TIE_RTOL = 1e-12


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.abs(u)
    # argmax returns the lowest index among the near-maximal entries
    idx = np.argmax(a >= a.max(axis=0) * (1 - SIGN_TIE_RTOL), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def truncated_svd(a: np.ndarray, rank: int) -> TruncatedSvd:
    """Rank-``rank`` SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry
    is nonnegative; the matching right vector is flipped with it.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    p, q = a.shape
    if not 1 <= rank <= min(p, q):
        raise ValueError(f"rank {rank} out of range for a {p}x{q} matrix")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u, v = _fix_signs(u[:, :rank], vt[:rank].T)
    return TruncatedSvd(u, s[:rank].copy(), v)


def procrustes_solve(f: np.ndarray) -> tuple[np.ndarray, bool]:
    """Maximizer of ``Tr(F^T Ω)`` over column-orthonormal ``Ω`` and a uniqueness flag."""
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    p, r = f.shape
    if r > p:
        raise ValueError(f"cannot fit {r} orthonormal columns in dimension {p}")
    svd = truncated_svd(f, r)
    top = svd.singular[0]
    unique = bool(top > 0 and svd.singular[-1] > DEGENERACY_RTOL * top)
    return svd.left @ svd.right.T, unique


def procrustes_max(f: np.ndarray) -> np.ndarray:
    """Solve ``argmax Tr(F^T Ω)`` s.t. ``Ω^T Ω = I`` via ``S T^T`` from the SVD of ``F``.

    Emits :class:`UniquenessWarning` when ``F`` is rank deficient; a valid
    maximizer is still returned.
    """
    omega, unique = procrustes_solve(f)
    if not unique:
        warnings.warn("Procrustes input is rank deficient; maximizer is not unique", UniquenessWarning, stacklevel=2)
    return omega


def _check_symmetric(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def spd_power(m: np.ndarray, power: float) -> np.ndarray:
    """``m**power`` for a symmetric positive-definite matrix via its eigendecomposition."""
    m = _check_symmetric(m)
    evals, evecs = np.linalg.eigh(m)
    if evals[0] <= 0:
        raise NotSPDError(f"matrix is not positive definite: smallest eigenvalue {evals[0]:.6g}")
    out = (evecs * evals**power) @ evecs.T
    return 0.5 * (out + out.T)


def spd_inv_sqrt(m: np.ndarray) -> np.ndarray:
    return spd_power(m, -0.5)


def spectral_norm(m: np.ndarray) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    m = _check_symmetric(m)
    return float(np.max(np.abs(np.linalg.eigvalsh(m))))


def ball_hyperplane_project(lam_ref: np.ndarray, u: np.ndarray, alpha: float, level: float) -> np.ndarray:
    """Project ``lam_ref`` onto ``{||λ||² = alpha} ∩ {u^T λ = level}``.

    Closed form: the hyperplane foot ``level·u/||u||²`` plus the normalized
    component of ``lam_ref`` orthogonal to ``u``, scaled to land on the sphere.
    When ``lam_ref`` is collinear with ``u`` the point ``√alpha·u/||u||`` is
    returned.
    """
    lam_ref = np.asarray(lam_ref, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    uu = float(u @ u)
    if uu == 0.0:
        raise ValueError("hyperplane normal u is zero")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    foot_sq = level * level / uu
    if foot_sq > alpha * (1 + 1e-12):
        raise ValueError(f"hyperplane level {level} does not meet the ball of radius² {alpha}")
    perp = lam_ref - (u @ lam_ref) / uu * u
    perp_norm = float(np.linalg.norm(perp))
    ref_norm = float(np.linalg.norm(lam_ref))
    if perp_norm <= COLLINEAR_RTOL * ref_norm or ref_norm == 0.0:
        return np.sqrt(alpha) * u / np.sqrt(uu)
    return level / uu * u + np.sqrt(max(alpha - foot_sq, 0.0)) * perp / perp_norm
