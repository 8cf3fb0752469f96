"""Problem definition: blocks, design matrix, scheme function, solver options.

Blocks are sample-stacked ndarrays of shape ``(n, p_1, ..., p_d)``. The
matrix view of a block, ``(n, p)`` with ``p = prod(p_m)``, stores each sample
in mode-1 vectorization order. Sample covariances use the divisor ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid problem or solver configuration."""


def block_matrix(block: np.ndarray) -> np.ndarray:
    """``(n, p_1, ..., p_d)`` -> ``(n, p)`` with rows in mode-1 vectorization order."""
    block = np.asarray(block)
    return block.reshape(block.shape[0], -1, order="F")


def block_from_matrix(x: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    return np.asarray(x).reshape((x.shape[0], *dims), order="F")


@dataclass(frozen=True)
class BlockSet:
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=np.float64) for b in self.blocks)
        if len(blocks) < 2:
            raise ConfigError(f"need at least 2 blocks, got {len(blocks)}")
        for k, b in enumerate(blocks):
            if b.ndim < 2:
                raise ConfigError(f"block {k} must be sample-stacked with at least 2 modes, got shape {b.shape}")
        ns = {b.shape[0] for b in blocks}
        if len(ns) != 1:
            raise ConfigError(f"blocks disagree on the number of samples: {sorted(ns)}")
        if blocks[0].shape[0] < 2:
            raise ConfigError("need at least 2 samples")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def dims(self) -> list[tuple[int, ...]]:
        return [b.shape[1:] for b in self.blocks]

    def matrices(self) -> list[np.ndarray]:
        return [block_matrix(b) for b in self.blocks]

    def subset(self, idx: Sequence[int]) -> "BlockSet":
        return BlockSet(tuple(self.blocks[i] for i in idx))


def validate_design(c: np.ndarray, n_blocks: int | None = None) -> np.ndarray:
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if c.shape[0] != c.shape[1]:
        raise ConfigError(f"design matrix must be square, got {c.shape}")
    if n_blocks is not None and c.shape[0] != n_blocks:
        raise ConfigError(f"design matrix is {c.shape[0]}x{c.shape[0]} but there are {n_blocks} blocks")
    if not np.allclose(c, c.T, rtol=0, atol=1e-12):
        raise ConfigError("design matrix must be symmetric")
    if np.any(c < 0):
        raise ConfigError("design matrix entries must be nonnegative")
    if not np.any(c[~np.eye(c.shape[0], dtype=bool)] > 0):
        raise ConfigError("design matrix needs at least one positive off-diagonal entry")
    return c


def full_design(n_blocks: int) -> np.ndarray:
    """All blocks connected, no self-connections."""
    return np.ones((n_blocks, n_blocks)) - np.eye(n_blocks)


@dataclass(frozen=True)
class Scheme:
    name: str
    g: Callable[[float], float] = field(repr=False, compare=False)
    dg: Callable[[float], float] = field(repr=False, compare=False)


SCHEMES = {
    "identity": Scheme("identity", lambda x: x, lambda x: 1.0),
    "square": Scheme("square", lambda x: x * x, lambda x: 2.0 * x),
}


def get_scheme(scheme: str | Scheme) -> Scheme:
    if isinstance(scheme, Scheme):
        return scheme
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}") from None


def validate_scheme(scheme: Scheme, c: np.ndarray) -> None:
    # A nonzero diagonal in C needs g' >= 0 on [0, inf) for multi-convexity.
    if np.any(np.diag(c) != 0):
        grid = np.linspace(0.0, 1e3, 257)
        if any(scheme.dg(x) < 0 for x in grid):
            raise ConfigError(f"scheme {scheme.name!r} has negative derivative on x >= 0 but C has a nonzero diagonal")


REGIMES = ("separable", "non-separable")


@dataclass(frozen=True)
class SolverOptions:
    """Options for a fit.

    ``orth_mode`` is ``"all"`` (completely orthogonal factors) or a 0-based
    mode index applied to every block, or a per-block sequence of either.
    ``tandem`` enables the SVD-based joint update for matrix blocks in the
    separable regime.
    """

    ranks: int | tuple[int, ...] = 1
    regime: str = "separable"
    tau: float | tuple[float, ...] = 1e-3
    eps: float = 1e-10
    max_iter: int = 1000
    n_starts: int = 1
    seed: int = 0
    orth_mode: int | str | tuple = 0
    tandem: bool = True

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.max_iter < 1 or self.n_starts < 1:
            raise ConfigError("max_iter and n_starts must be >= 1")
        for name in ("ranks", "tau", "orth_mode"):
            v = getattr(self, name)
            if isinstance(v, list):
                object.__setattr__(self, name, tuple(v))

    def with_(self, **kw) -> "SolverOptions":
        return replace(self, **kw)

    def _per_block(self, value, n_blocks: int, name: str) -> list:
        if isinstance(value, tuple):
            if len(value) != n_blocks:
                raise ConfigError(f"{name} has {len(value)} entries for {n_blocks} blocks")
            return list(value)
        return [value] * n_blocks

    def block_ranks(self, n_blocks: int) -> list[int]:
        return [int(r) for r in self._per_block(self.ranks, n_blocks, "ranks")]

    def block_taus(self, n_blocks: int) -> list[float]:
        return [float(t) for t in self._per_block(self.tau, n_blocks, "tau")]

    def orth_modes(self, dims: Sequence[Sequence[int]]) -> list[tuple[int, ...]]:
        """Per-block tuple of modes that carry the orthogonality constraint."""
        out = []
        for spec, d in zip(self._per_block(self.orth_mode, len(dims), "orth_mode"), dims):
            if spec == "all":
                out.append(tuple(range(len(d))))
            else:
                m = int(spec)
                if not 0 <= m < len(d):
                    raise ConfigError(f"orth_mode {m} out of range for a block with {len(d)} modes")
                out.append((m,))
        return out

    def validate_for(self, dims: Sequence[Sequence[int]]) -> None:
        ranks = self.block_ranks(len(dims))
        self.block_taus(len(dims))
        for l, (r, d, modes) in enumerate(zip(ranks, dims, self.orth_modes(dims))):
            if r < 1:
                raise ConfigError(f"block {l}: rank must be >= 1")
            for m in modes:
                if d[m] < r:
                    raise ConfigError(
                        f"block {l}: rank {r} exceeds dimension {d[m]} of orthogonal mode {m}"
                    )


def preprocess(bs: BlockSet) -> tuple[BlockSet, np.ndarray]:
    """Center every variable over samples, then divide block ``l`` by
    ``s_l = sqrt(p_l / n) * ||X_l||_F`` (computed after centering)."""
    out, scales = [], []
    for l, b in enumerate(bs.blocks):
        with np.errstate(invalid="ignore"):
            centered = b - b.mean(axis=0, keepdims=True)
        p = int(np.prod(b.shape[1:]))
        s = np.sqrt(p / bs.n) * np.linalg.norm(centered)
        # non-finite data passes through; the solver aborts on the criterion
        if s == 0:
            raise ConfigError(f"block {l} is constant across samples; cannot scale it")
        out.append(centered / s)
        scales.append(s)
    return BlockSet(tuple(out)), np.asarray(scales)


def components(xs: Sequence[np.ndarray], ws: Sequence[np.ndarray]) -> list[np.ndarray]:
    comps = []
    for l, (x, w) in enumerate(zip(xs, ws)):
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if x.shape[1] != w.size:
            raise ValueError(f"block {l} has {x.shape[1]} variables but its vector has length {w.size}")
        comps.append(x @ w)
    return comps


def _as_matrices(bs) -> list[np.ndarray]:
    if isinstance(bs, BlockSet):
        return bs.matrices()
    return [np.asarray(x, dtype=np.float64) for x in bs]


def criterion_from_components(ys: Sequence[np.ndarray], c: np.ndarray, scheme: Scheme, n: int) -> float:
    total = 0.0
    L = len(ys)
    for l in range(L):
        for k in range(L):
            if c[l, k] != 0:
                total += c[l, k] * scheme.g(float(ys[l] @ ys[k]) / n)
    return total


def criterion_value(bs, c, scheme, vectors) -> float:
    """``sum_{l,k} c_lk g(w_l^T Σ̂_lk w_k)`` evaluated through the components."""
    xs = _as_matrices(bs)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (len(xs), len(xs)):
        raise ValueError(f"design matrix shape {c.shape} does not match {len(xs)} blocks")
    ys = components(xs, vectors)
    return criterion_from_components(ys, c, get_scheme(scheme), xs[0].shape[0])


def gradient_from_components(x_l: np.ndarray, ys: Sequence[np.ndarray], c: np.ndarray, scheme: Scheme, l: int) -> np.ndarray:
    n = x_l.shape[0]
    z = np.zeros(n)
    for k, y_k in enumerate(ys):
        if c[l, k] != 0:
            z += c[l, k] * scheme.dg(float(ys[l] @ y_k) / n) * y_k
    return (2.0 / n) * (x_l.T @ z)


def block_gradient(bs, c, scheme, vectors, l: int) -> np.ndarray:
    """Partial gradient of the criterion with respect to ``w_l``."""
    xs = _as_matrices(bs)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (len(xs), len(xs)):
        raise ValueError(f"design matrix shape {c.shape} does not match {len(xs)} blocks")
    ys = components(xs, vectors)
    return gradient_from_components(xs[l], ys, c, get_scheme(scheme), l)
