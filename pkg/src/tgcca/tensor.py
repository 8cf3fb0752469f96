"""Dense tensors and the index-order algebra used throughout the package.

Conventions
-----------
* Mode-1 vectorization: the first index varies fastest (Fortran order).
* Mode-m matricization: rows index mode ``m``; the remaining modes index the
  columns with the smallest remaining mode cycling fastest (Kolda & Bader).
* Kronecker order matches the vectorization, so
  ``vec(a1 o a2 o a3) == kron(a3, kron(a2, a1))``.

Modes are 0-based in the Python API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_LETTERS = "abcdefghijklmnopqrstuvwxy"  # 'z' is reserved for the rank index


@dataclass(frozen=True)
class DenseTensor:
    """A dense real tensor with an explicit mode-1 storage contract.

    ``data`` holds the ``prod(dims)`` entries in mode-1 vectorization order.
    """

    dims: tuple[int, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(p) for p in self.dims)
        if len(dims) < 1 or any(p < 1 for p in dims):
            raise ValueError(f"invalid tensor dims {dims}")
        data = np.asarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != int(np.prod(dims)):
            raise ValueError(
                f"data length {data.size} does not match dims {dims} (expected {int(np.prod(dims))})"
            )
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "DenseTensor":
        """Wrap an ndarray indexed as ``array[i_1, ..., i_d]``."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1)
        return cls(array.shape, array.ravel(order="F"))

    @property
    def order(self) -> int:
        return len(self.dims)

    def to_array(self) -> np.ndarray:
        """Return the entries as an ndarray indexed ``[i_1, ..., i_d]``."""
        return fold(self.data, self.dims)

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    __hash__ = None


def mode1_vectorize(t: DenseTensor | np.ndarray) -> np.ndarray:
    if isinstance(t, DenseTensor):
        return t.data.copy()
    return np.asarray(t, dtype=np.float64).ravel(order="F")


def fold(vec: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`mode1_vectorize`: reshape a vector to ``dims``."""
    vec = np.asarray(vec)
    if vec.size != int(np.prod(dims)):
        raise ValueError(f"cannot fold {vec.size} entries into dims {tuple(dims)}")
    return vec.reshape(tuple(dims), order="F")


def _as_array(t: DenseTensor | np.ndarray) -> np.ndarray:
    return t.to_array() if isinstance(t, DenseTensor) else np.asarray(t, dtype=np.float64)


def _check_mode(m: int, d: int) -> None:
    if not 0 <= m < d:
        raise ValueError(f"mode index {m} out of range for a tensor of order {d}")


def mode_matricize(t: DenseTensor | np.ndarray, m: int) -> np.ndarray:
    """Mode-``m`` unfolding, shape ``(p_m, prod_{j != m} p_j)``."""
    a = _as_array(t)
    _check_mode(m, a.ndim)
    return np.moveaxis(a, m, 0).reshape(a.shape[m], -1, order="F")


def mode_fold(mat: np.ndarray, m: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`mode_matricize` for a tensor of shape ``dims``."""
    dims = tuple(dims)
    _check_mode(m, len(dims))
    moved = (dims[m],) + dims[:m] + dims[m + 1:]
    return np.moveaxis(np.asarray(mat).reshape(moved, order="F"), 0, m)


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product: column ``r`` is ``kron(a[:, r], b[:, r])``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"khatri_rao needs equal column counts, got {a.shape[1]} and {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(factors: Sequence[np.ndarray]) -> np.ndarray:
    """``factors[-1] ⊙ ... ⊙ factors[0]``, the matrix whose columns are the rank-1 terms."""
    out = factors[0]
    for f in factors[1:]:
        out = khatri_rao(f, out)
    return out


def mode_product(t: DenseTensor | np.ndarray, m: int, a: np.ndarray):
    """``t ×_m a``: multiply every mode-``m`` fiber by ``a`` (shape ``q × p_m``).

    Returns the same type as ``t``.
    """
    arr = _as_array(t)
    _check_mode(m, arr.ndim)
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape[1] != arr.shape[m]:
        raise ValueError(f"matrix with {a.shape[1]} columns cannot act on mode {m} of size {arr.shape[m]}")
    out = np.moveaxis(np.tensordot(a, arr, axes=(1, m)), 0, m)
    if isinstance(t, DenseTensor):
        return DenseTensor.from_array(out)
    return out


@dataclass(frozen=True)
class CpVector:
    """A vector ``x = sum_r weights[r] * kron(W_d[:, r], ..., W_1[:, r])``."""

    weights: np.ndarray
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64)).copy()
        fs = tuple(np.atleast_2d(np.asarray(f, dtype=np.float64)).copy() for f in self.factors)
        if not fs:
            raise ValueError("a CP vector needs at least one factor matrix")
        for k, f in enumerate(fs):
            if f.ndim != 2 or f.shape[1] != w.size:
                raise ValueError(
                    f"factor {k} has shape {f.shape}, expected (p_{k}, {w.size}) to match the weights"
                )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "factors", fs)

    @property
    def rank(self) -> int:
        return self.weights.size

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def rank_one_matrix(self) -> np.ndarray:
        """The ``p × R`` matrix of Kronecker rank-1 terms."""
        return khatri_rao_chain(self.factors)

    def reconstruct(self) -> np.ndarray:
        return cp_reconstruct(self)


def cp_reconstruct(v: CpVector) -> np.ndarray:
    return khatri_rao_chain(v.factors) @ v.weights


def contract_except(g: np.ndarray, factors: Sequence[np.ndarray], m: int) -> np.ndarray:
    """Contract tensor ``g`` with column ``r`` of every factor except mode ``m``.

    Returns a ``p_m × R`` matrix whose column ``r`` is
    ``g ×_{q != m} factors[q][:, r]^T``.
    """
    d = g.ndim
    _check_mode(m, d)
    if d == 1:
        return np.repeat(g.reshape(-1, 1), factors[0].shape[1], axis=1)
    sub_g = _LETTERS[:d]
    operands = [g]
    subs = [sub_g]
    for q in range(d):
        if q != m:
            operands.append(factors[q])
            subs.append(sub_g[q] + "z")
    return np.einsum(",".join(subs) + "->" + sub_g[m] + "z", *operands, optimize=True)


def contract_all(g: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """``u[r] = g ×_1 W_1[:, r]^T ... ×_d W_d[:, r]^T`` (equals ``W^T vec(g)``)."""
    d = g.ndim
    sub_g = _LETTERS[:d]
    subs = [sub_g] + [sub_g[q] + "z" for q in range(d)]
    return np.einsum(",".join(subs) + "->z", g, *factors, optimize=True)
