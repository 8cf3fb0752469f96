"""Regularization matrices and the whitening change of variables.

Three kinds of regularization matrix are supported: the identity, a full SPD
matrix, and a separable one, ``M = M_d ⊗ ... ⊗ M_1`` stored as its per-mode
factors. Separable whitening never assembles ``M``: the per-mode inverse
square roots are applied as mode products.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import NotSPDError, spd_inv_sqrt, spectral_norm
from .model import block_matrix
from .tensor import khatri_rao_chain, mode_product


@dataclass(frozen=True)
class IdentityReg:
    dims: tuple[int, ...]


@dataclass(frozen=True)
class FullReg:
    matrix: np.ndarray


@dataclass(frozen=True)
class SeparableReg:
    """``factors[m]`` is the ``p_m × p_m`` factor of mode ``m`` (0-based)."""

    factors: tuple[np.ndarray, ...]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def assemble(self) -> np.ndarray:
        """Explicit ``M_d ⊗ ... ⊗ M_1``; only for small ``p``."""
        out = self.factors[0]
        for f in self.factors[1:]:
            out = np.kron(f, out)
        return out


RegularizationSpec = IdentityReg | FullReg | SeparableReg


def _check_spd(m: np.ndarray, what: str) -> None:
    evals = np.linalg.eigvalsh(0.5 * (m + m.T))
    if evals[0] <= 0:
        raise NotSPDError(f"{what} is not positive definite: smallest eigenvalue {evals[0]:.6g}")


def validate_spec(spec: RegularizationSpec) -> None:
    if isinstance(spec, FullReg):
        _check_spd(spec.matrix, "regularization matrix")
    elif isinstance(spec, SeparableReg):
        for m, f in enumerate(spec.factors):
            _check_spd(f, f"mode-{m} regularization factor")


def estimate_full_M(block: np.ndarray, tau: float) -> FullReg:
    """``X^T X / n + tau I`` for a centered sample-stacked block."""
    x = block_matrix(block)
    n, p = x.shape
    m = x.T @ x / n
    m = 0.5 * (m + m.T)
    m[np.diag_indices(p)] += tau
    if tau <= 0:
        _check_spd(m, "regularized covariance (tau <= 0 needs a nonsingular sample covariance)")
    return FullReg(m)


def mode_covariances(block: np.ndarray, balance: bool = False) -> list[np.ndarray]:
    """Per-mode moment estimates ``(1/(n prod_{j!=m} p_j)) sum_i X_i(m) X_i(m)^T``.

    The Kronecker product of the factors is only defined up to moving scale
    between them. With ``balance=False`` modes ``m >= 2`` are rescaled to
    trace ``p_m`` and mode 1 carries the scale. With ``balance=True`` every
    factor gets the same mean eigenvalue. Either way the trace of the
    Kronecker product equals the trace of the sample covariance.
    """
    block = np.asarray(block, dtype=np.float64)
    n, dims = block.shape[0], block.shape[1:]
    d = len(dims)
    p = int(np.prod(dims))
    total = float(np.sum(block * block)) / n
    out = []
    for m, pm in enumerate(dims):
        a = np.moveaxis(block, m + 1, 0).reshape(pm, -1)
        cov = a @ a.T / (n * (p // pm))
        out.append(0.5 * (cov + cov.T))
    if total <= 0:
        return out
    if balance:
        level = (total / p) ** (1.0 / d)
        return [c * (level * c.shape[0] / np.trace(c)) for c in out]
    for m in range(1, d):
        out[m] = out[m] * (dims[m] / np.trace(out[m]))
    out[0] = out[0] * (total / (np.trace(out[0]) * np.prod(dims[1:], dtype=float)))
    return out


def estimate_separable_M(block: np.ndarray, tau: float, balance: bool = True) -> SeparableReg:
    """Separable regularized estimate ``⊗_m (Σ̂_m + tau^{1/d} I)``.

    ``balance`` selects how scale is shared between the factors (see
    :func:`mode_covariances`). Balanced factors make the per-factor
    shrinkage ``tau^{1/d}`` act on every mode alike; with mode 1 carrying the
    scale it would all but vanish on the other modes.
    """
    covs = mode_covariances(block, balance)
    d = len(covs)
    shrink = tau ** (1.0 / d) if tau > 0 else 0.0
    return SeparableReg(tuple(c + shrink * np.eye(c.shape[0]) for c in covs))


def inv_sqrt_factors(spec: SeparableReg) -> tuple[np.ndarray, ...]:
    return tuple(spd_inv_sqrt(f) for f in spec.factors)


def apply_mode_factors(block: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """``X ×_2 A_1 ... ×_{d+1} A_d`` on a sample-stacked block."""
    out = np.asarray(block, dtype=np.float64)
    for m, a in enumerate(mats):
        out = mode_product(out, m + 1, a)
    return out


def whiten_block(block: np.ndarray, spec: RegularizationSpec) -> tuple[np.ndarray, tuple[np.ndarray, ...] | np.ndarray | None]:
    """Return the whitened block and the stored inverse square root(s).

    For a separable spec the second item is the tuple of per-mode
    ``M_m^{-1/2}``; for a full spec it is the dense ``M^{-1/2}``; for the
    identity it is ``None``.
    """
    block = np.asarray(block, dtype=np.float64)
    if isinstance(spec, IdentityReg):
        return block.copy(), None
    if isinstance(spec, SeparableReg):
        if spec.dims != block.shape[1:]:
            raise ValueError(f"spec dims {spec.dims} do not match block dims {block.shape[1:]}")
        inv = inv_sqrt_factors(spec)
        return apply_mode_factors(block, inv), inv
    if isinstance(spec, FullReg):
        inv = spd_inv_sqrt(spec.matrix)
        x = block_matrix(block) @ inv
        return x.reshape(block.shape, order="F"), inv
    raise TypeError(f"unsupported regularization spec {type(spec).__name__}")


def kronecker_whiten_explicit(block: np.ndarray, inv_factors: Sequence[np.ndarray], chunk: int = 2048) -> np.ndarray:
    """Whiten by multiplying with the explicitly assembled Kronecker ``M^{-1/2}``.

    The Kronecker matrix is generated in column chunks so large ``p`` stays
    within memory; the cost is still ``O(n p^2)``.
    """
    x = block_matrix(block)
    n, p = x.shape
    dims = tuple(f.shape[0] for f in inv_factors)
    out = np.empty((n, p))
    # column j of K = kron(A_d, ..., A_1) is kron(A_d[:, j_d], ..., A_1[:, j_1])
    idx = np.arange(p)
    multi = np.unravel_index(idx, dims, order="F")
    for start in range(0, p, chunk):
        cols = slice(start, min(start + chunk, p))
        k = inv_factors[0][:, multi[0][cols]]
        for m in range(1, len(dims)):
            a = inv_factors[m][:, multi[m][cols]]
            k = (a[:, None, :] * k[None, :, :]).reshape(-1, k.shape[1])
        out[:, cols] = x @ k
    return out.reshape(block.shape, order="F")


def spec_spectral_norm(spec: RegularizationSpec) -> float:
    if isinstance(spec, IdentityReg):
        return 1.0
    if isinstance(spec, FullReg):
        return spectral_norm(spec.matrix)
    if isinstance(spec, SeparableReg):
        return float(np.prod([spectral_norm(f) for f in spec.factors]))
    raise TypeError(f"unsupported regularization spec {type(spec).__name__}")


def factor_gram(spec: RegularizationSpec, factors: Sequence[np.ndarray]) -> np.ndarray:
    """``W^T M W`` for the rank-1 term matrix ``W`` built from ``factors``."""
    if isinstance(spec, IdentityReg):
        out = np.ones((factors[0].shape[1],) * 2)
        for f in factors:
            out = out * (f.T @ f)
        return out
    if isinstance(spec, SeparableReg):
        out = np.ones((factors[0].shape[1],) * 2)
        for f, m in zip(factors, spec.factors):
            out = out * (f.T @ m @ f)
        return out
    if isinstance(spec, FullReg):
        w = khatri_rao_chain(factors)
        return w.T @ (spec.matrix @ w)
    raise TypeError(f"unsupported regularization spec {type(spec).__name__}")


def unwhiten_factors(inv: tuple[np.ndarray, ...] | np.ndarray | None, factors: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
    """Map whitened-space CP factors back: ``w = M^{-1/2} v`` keeps the CP form
    with factors ``M_m^{-1/2} V_m`` when ``M`` is separable."""
    if inv is None:
        return tuple(np.array(f) for f in factors)
    if isinstance(inv, tuple):
        return tuple(a @ f for a, f in zip(inv, factors))
    if len(factors) != 1:
        raise ValueError("a full regularization matrix only preserves the CP form for vector blocks")
    return (inv @ factors[0],)


def estimate(block: np.ndarray, kind: str, tau: float) -> RegularizationSpec:
    """Dispatch on ``kind`` in {"identity", "full", "separable"}."""
    if kind == "identity":
        return IdentityReg(tuple(block.shape[1:]))
    if kind == "full":
        return estimate_full_M(block, tau)
    if kind == "separable":
        return estimate_separable_M(block, tau)
    raise ValueError(f"unknown regularization kind {kind!r}")
