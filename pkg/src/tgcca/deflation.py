"""Several components per block by deflation, plus alignment metrics.

After a stage, every block is replaced by its residual after regressing it on
the stage's component, ``X ← X − y (y^T y)^{-1} y^T X``; the next stage is
fitted on the residual blocks, so components within a block are mutually
orthogonal.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import BlockSet, SolverOptions
from .solver import FitResult, NumericalAbort, fit
from .tensor import khatri_rao_chain, mode_matricize

EXHAUSTED_TOL = 1e-10


def deflate_block(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Remove from every variable of ``x`` its projection on the component ``y``.

    ``x`` is sample-stacked, ``(n, ...)``; the result has the same shape.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"component has {y.shape[0]} entries for {x.shape[0]} samples")
    yy = float(y @ y)
    if yy == 0.0:
        raise ValueError("cannot deflate on a zero component")
    flat = x.reshape(x.shape[0], -1)
    flat = flat - np.outer(y, (y @ flat) / yy)
    return flat.reshape(x.shape)


@dataclass
class ComponentStack:
    """``stages[k]`` is the fit of stage ``k`` or ``None`` once the signal is exhausted."""

    stages: list[FitResult | None]
    components: list[list[np.ndarray]] = field(default_factory=list)
    starts: list[list[FitResult]] = field(default_factory=list)
    exhausted_at: int | None = None

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def block_components(self, l: int) -> np.ndarray:
        """``n × K'`` matrix of the non-null components of block ``l``."""
        cols = [c[l] for c in self.components]
        return np.column_stack(cols) if cols else np.empty((0, 0))


def extract_components(
    bs: BlockSet,
    c,
    scheme,
    options: SolverOptions,
    n_components: int,
    regularization: str = "auto",
    threads: int = 1,
) -> ComponentStack:
    """Fit ``n_components`` successive stages on deflated blocks.

    ``bs`` should already be preprocessed. A stage whose best criterion falls
    below ``EXHAUSTED_TOL`` ends the extraction; the remaining stages are
    recorded as ``None``.
    """
    if n_components < 1:
        raise ValueError("need at least one component")
    blocks = list(bs.blocks)
    stack = ComponentStack(stages=[])
    for k in range(n_components):
        if stack.exhausted_at is not None:
            stack.stages.append(None)
            continue
        try:
            best, runs = fit(BlockSet(tuple(blocks)), c, scheme, options, regularization, threads)
        except NumericalAbort as exc:
            raise NumericalAbort(f"stage {k}: {exc}") from exc
        if abs(best.criterion) < EXHAUSTED_TOL or any(float(y @ y) == 0.0 for y in best.components):
            stack.exhausted_at = k
            stack.stages.append(None)
            continue
        stack.stages.append(best)
        stack.starts.append(runs)
        stack.components.append(best.components)
        blocks = [deflate_block(x, y) for x, y in zip(blocks, best.components)]
    return stack


def recover_shared_factors(x: np.ndarray, b: np.ndarray, c: np.ndarray, lam: Sequence[float]) -> np.ndarray:
    """Least-squares mode-1 factor of a 3-mode block given the other two.

    With ``X_(1) ≈ A Λ K^T`` and ``K`` the Khatri-Rao product matching the
    mode-1 matricization (``K[:, r] = c_r ⊗ b_r``), returns
    ``A = X_(1) K Λ (Λ K^T K Λ)^{-1}``, which reduces to ``X_(1) K Λ^{-1}`` when
    ``K`` has orthonormal columns.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a 3-mode block, got {x.ndim} modes")
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if b.shape[1] != lam.size or c.shape[1] != lam.size:
        raise ValueError("b, c and lam disagree on the rank")
    if b.shape[0] != x.shape[1] or c.shape[0] != x.shape[2]:
        raise ValueError(f"factor shapes {b.shape}, {c.shape} do not match block {x.shape}")
    if np.any(lam == 0):
        raise ValueError("weights must be nonzero")
    k = khatri_rao_chain([b, c]) * lam[None, :]
    normal = k.T @ k
    if np.linalg.cond(normal) > 1e12:
        raise np.linalg.LinAlgError("normal matrix is singular")
    return np.linalg.solve(normal, (mode_matricize(x, 0) @ k).T).T


def cosine_alignment(w_true, w_est) -> float:
    """``|w^T ŵ| / (||w|| ||ŵ||)``."""
    a = np.asarray(w_true, dtype=np.float64).reshape(-1)
    b = np.asarray(w_est, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(min(1.0, abs(a @ b) / (na * nb)))


def nearest_rank(values: Iterable[float], q: float) -> float:
    """Nearest-rank quantile: the ``ceil(q N)``-th smallest value (1-based)."""
    v = sorted(values)
    if not v:
        raise ValueError("no values")
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    return v[max(1, math.ceil(q * len(v))) - 1]


def summarize(values: Sequence[float]) -> dict[str, float]:
    """Median with nearest-rank 2.5% and 97.5% quantiles."""
    return {
        "median": float(np.median(values)),
        "q025": nearest_rank(values, 0.025),
        "q975": nearest_rank(values, 0.975),
    }


ALIGNMENT_COLUMNS = ("model", "block", "fold", "component", "cosine", "criterion")
SUMMARY_COLUMNS = ("model", "block", "component", "median", "q025", "q975", "count")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def rows_to_csv(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in columns])
    return buf.getvalue()


def summary_rows(rows: Sequence[dict]) -> list[dict]:
    """Group alignment rows by (model, block, component) and summarize cosines."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r["model"], r["block"], r["component"]), []).append(float(r["cosine"]))
    out = []
    for key in sorted(groups):
        s = summarize(groups[key])
        out.append(dict(zip(("model", "block", "component"), key), **s, count=len(groups[key])))
    return out
