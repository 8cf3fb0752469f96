"""Synthetic multiblock data with a single shared latent factor.

Block ``l`` has a known canonical vector ``w_l`` (a folded 0/1 shape with a
known CP decomposition). Its covariance is

    Σ_l = S_l + (||S_l||_F / (η ||E_l||_F)) E_l,
    S_l = w w^T / ||w||^4,   E_l = P T T^T P,   P = I - w w^T / ||w||^2,

so ``w^T Σ_l w = 1`` and ``η`` sets the signal-to-noise ratio. Observations
are drawn as ``z ~ N(0, 1)``, ``x_l | z ~ N(a_l z, Σ_l - a_l a_l^T)`` with
``a_l = ρ_l Σ_l w_l``, so the canonical components of blocks ``l`` and ``k``
have correlation ``ρ_l ρ_k``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import read_array, write_tensor
from .linalg import truncated_svd
from .model import BlockSet, ConfigError, block_from_matrix
from .tensor import CpVector, mode1_vectorize

# η values of the SNR grid and their labels in dB.
SNR_DB = {0.1: -20.0, 0.3: -10.5, 0.5: -6.0, 1.0: 0.0}
SHAPES = ("rect", "cross", "diag-band", "user-file")


@dataclass(frozen=True)
class Shape:
    """A folded 0/1 mask and an exact orthogonal CP decomposition of it."""

    name: str
    mask: np.ndarray
    cp: CpVector

    @property
    def vector(self) -> np.ndarray:
        return mode1_vectorize(self.mask)


def _indicator(p: int, start: int, stop: int) -> np.ndarray:
    if not 0 <= start < stop <= p:
        raise ConfigError(f"range [{start}, {stop}) does not fit in a mode of size {p}")
    v = np.zeros(p)
    v[start:stop] = 1.0
    return v


def _svd_cp(mask: np.ndarray, tol: float = 1e-10) -> CpVector:
    s = np.linalg.svd(mask, compute_uv=False)
    rank = int(np.sum(s > tol * s[0]))
    svd = truncated_svd(mask, rank)
    return CpVector(svd.singular, (svd.left, svd.right))


def _rect(dims, ranges=None) -> Shape:
    if ranges is None:
        ranges = [(p // 4, max(p // 4 + 1, (3 * p) // 4)) for p in dims]
    if len(ranges) != len(dims):
        raise ConfigError(f"rect needs one range per mode, got {len(ranges)} for {len(dims)} modes")
    inds = [_indicator(p, int(a), int(b)) for p, (a, b) in zip(dims, ranges)]
    mask = inds[0]
    for v in inds[1:]:
        mask = np.multiply.outer(mask, v)
    norms = [np.linalg.norm(v) for v in inds]
    cp = CpVector(np.array([np.prod(norms)]), tuple((v / n)[:, None] for v, n in zip(inds, norms)))
    return Shape("rect", np.asarray(mask, dtype=np.float64).reshape(dims), cp)


def _cross(dims, center=None, half_width=None, arm=None) -> Shape:
    if len(dims) != 2:
        raise ConfigError("cross is defined for 2-mode blocks")
    p1, p2 = dims
    if min(p1, p2) < 5:
        raise ConfigError(f"cross needs both dims >= 5, got {dims}")
    ci, cj = center if center is not None else (p1 // 2, p2 // 2)
    h = int(half_width) if half_width is not None else max(1, min(p1, p2) // 10)
    a = int(arm) if arm is not None else (min(p1, p2) * 2) // 5
    rows = _indicator(p1, max(0, ci - h), min(p1, ci + h + 1))  # horizontal bar
    cols = _indicator(p2, max(0, cj - h), min(p2, cj + h + 1))  # vertical bar
    hspan = _indicator(p2, max(0, cj - a), min(p2, cj + a + 1))
    vspan = _indicator(p1, max(0, ci - a), min(p1, ci + a + 1))
    # the bars overlap inside both spans, so the 0/1 union is rank 2:
    # rows ∘ (hspan - cols) + vspan ∘ cols
    mask = np.outer(rows, hspan - cols) + np.outer(vspan, cols)
    if not np.all(np.isin(mask, (0.0, 1.0))):
        raise ConfigError(f"cross parameters give overlapping bars outside the spans for dims {dims}")
    return Shape("cross", mask, _svd_cp(mask))


def _diag_band(dims, width=None) -> Shape:
    if len(dims) != 2:
        raise ConfigError("diag-band is defined for 2-mode blocks")
    p1, p2 = dims
    w = float(width) if width is not None else max(1.0, min(p1, p2) / 8)
    i = np.arange(p1)[:, None] / max(p1 - 1, 1)
    j = np.arange(p2)[None, :] / max(p2 - 1, 1)
    mask = (np.abs(i - j) * min(p1, p2) <= w).astype(np.float64)
    return Shape("diag-band", mask, _svd_cp(mask))


def _user_file(dims, path=None) -> Shape:
    if path is None:
        raise ConfigError("user-file shape needs a 'path'")
    mask = read_array(path)
    if tuple(mask.shape) != tuple(dims):
        raise ConfigError(f"shape file {path} has dims {mask.shape}, block has {tuple(dims)}")
    if mask.ndim != 2:
        raise ConfigError("user-file shapes must have 2 modes")
    if not np.any(mask):
        raise ConfigError(f"shape file {path} is all zeros")
    return Shape("user-file", mask, _svd_cp(mask))


def builtin_shapes(name: str, dims: Sequence[int], **params) -> Shape:
    """Build a named shape on a block of mode sizes ``dims``.

    ``rect`` (rank 1, any order; ``ranges=[(start, stop), ...]``), ``cross``
    (rank 2; ``center``, ``half_width``, ``arm``), ``diag-band`` (rank >= 3;
    ``width``) and ``user-file`` (``path`` to a tensor file).
    """
    dims = tuple(int(p) for p in dims)
    if name == "rect":
        return _rect(dims, **params)
    if name == "cross":
        return _cross(dims, **params)
    if name == "diag-band":
        return _diag_band(dims, **params)
    if name == "user-file":
        return _user_file(dims, **params)
    raise ConfigError(f"unknown shape {name!r}; choose from {SHAPES}")


def make_noise(p: int, shape: np.ndarray | None, rng: np.random.Generator, unstructured: bool = True) -> np.ndarray:
    """Noise factor ``T`` with ``T T^T`` the sum of Frobenius-normalized parts.

    The unstructured part is ``T_u T_u^T`` for a lower-triangular Gaussian
    ``T_u``; the structured part is ``t t^T`` for the vectorized ``shape``.
    ``unstructured=False`` drops ``T_u`` (used in tests).
    """
    parts = []
    if unstructured:
        tu = np.tril(rng.standard_normal((p, p)))
        parts.append(tu / np.sqrt(np.linalg.norm(tu @ tu.T)))
    if shape is not None:
        t = mode1_vectorize(shape)
        if t.size != p:
            raise ConfigError(f"noise shape has {t.size} entries for a block of {p} variables")
        nt = np.linalg.norm(t)
        if nt == 0:
            raise ConfigError("structured noise shape is zero")
        parts.append((t / nt)[:, None])
    if not parts:
        return np.zeros((p, 0))
    return np.hstack(parts)


def build_block_cov(w: np.ndarray, eta: float, t: np.ndarray) -> np.ndarray:
    """Block covariance with ``w^T Σ w = 1`` and noise-to-signal ratio ``1/η``."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    ww = float(w @ w)
    if ww == 0:
        raise ConfigError("canonical vector is zero")
    if not eta > 0:
        raise ConfigError("eta must be positive")
    s = np.outer(w, w) / ww**2
    proj = np.eye(w.size) - np.outer(w, w) / ww
    e = proj @ (t @ t.T) @ proj
    e = 0.5 * (e + e.T)
    ne = np.linalg.norm(e)
    if ne == 0:
        return s
    return s + (np.linalg.norm(s) / (eta * ne)) * e


def conditional_factor(cov: np.ndarray, a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Square-root factor ``L`` with ``L L^T = cov - a a^T``.

    Computed from an eigendecomposition so the singular case ``|ρ| = 1`` works.
    """
    c = cov - np.outer(a, a)
    c = 0.5 * (c + c.T)
    evals, evecs = np.linalg.eigh(c)
    # roundoff in the difference is relative to the size of ``cov``
    scale = max(float(np.linalg.norm(cov, 2)), 1e-300)
    if evals[0] < -tol * scale:
        raise ConfigError(f"conditional covariance is not PSD (eigenvalue {evals[0]:.3g}); |rho| too large")
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


@dataclass
class BlockSim:
    dims: tuple[int, ...]
    shape: str = "rect"
    shape_params: dict = field(default_factory=dict)
    rho: float = float(np.sqrt(0.8))
    noise_shape: str | None = None
    noise_params: dict = field(default_factory=dict)


@dataclass
class SimSpec:
    blocks: list[BlockSim]
    eta: float = 1.0
    n: int = 1000
    n_folds: int = 10
    seed: int = 0

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockSim) else BlockSim(**b) for b in self.blocks]
        for b in self.blocks:
            b.dims = tuple(int(p) for p in b.dims)
            if not -1 <= b.rho <= 1:
                raise ConfigError(f"rho must lie in [-1, 1], got {b.rho}")
        if len(self.blocks) < 2:
            raise ConfigError("need at least 2 blocks")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.n < 2 or self.n_folds < 1:
            raise ConfigError("need n >= 2 and at least one fold")

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        d = dict(d)
        if "snr_db" in d:
            db = float(d.pop("snr_db"))
            match = [eta for eta, lab in SNR_DB.items() if lab == db]
            if not match:
                raise ConfigError(f"snr_db must be one of {sorted(SNR_DB.values())}")
            d["eta"] = match[0]
        unknown = set(d) - {"blocks", "eta", "n", "n_folds", "seed"}
        if unknown:
            raise ConfigError(f"unknown simulation keys {sorted(unknown)}")
        if "blocks" not in d:
            raise ConfigError("simulation config needs 'blocks'")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        for b in out["blocks"]:
            b["dims"] = list(b["dims"])
        return out


@dataclass
class SimDataset:
    spec: SimSpec
    folds: list[BlockSet]
    truth: list[Shape]
    covariances: list[np.ndarray]
    loadings: list[np.ndarray]


def fold_seeds(seed: int, n_folds: int) -> list[np.random.SeedSequence]:
    """One stream for the model, then one per fold."""
    return np.random.SeedSequence(seed).spawn(1 + n_folds)


def build_model(spec: SimSpec, rng: np.random.Generator):
    shapes, covs, loads, factors = [], [], [], []
    for b in spec.blocks:
        shape = builtin_shapes(b.shape, b.dims, **b.shape_params)
        w = shape.vector
        noise = builtin_shapes(b.noise_shape, b.dims, **b.noise_params).mask if b.noise_shape else None
        t = make_noise(w.size, noise, rng)
        cov = build_block_cov(w, spec.eta, t)
        a = b.rho * (cov @ w)
        shapes.append(shape)
        covs.append(cov)
        loads.append(a)
        factors.append(conditional_factor(cov, a))
    return shapes, covs, loads, factors


def sample_fold(spec: SimSpec, loads, factors, rng: np.random.Generator) -> BlockSet:
    z = rng.standard_normal(spec.n)
    blocks = []
    for b, a, f in zip(spec.blocks, loads, factors):
        x = np.outer(z, a) + rng.standard_normal((spec.n, f.shape[1])) @ f.T
        blocks.append(block_from_matrix(x, b.dims))
    return BlockSet(tuple(blocks))


def sample_dataset(spec: SimSpec) -> SimDataset:
    seqs = fold_seeds(spec.seed, spec.n_folds)
    shapes, covs, loads, factors = build_model(spec, np.random.default_rng(seqs[0]))
    folds = [sample_fold(spec, loads, factors, np.random.default_rng(s)) for s in seqs[1:]]
    return SimDataset(spec, folds, shapes, covs, loads)


def split_folds(n: int, n_folds: int, seed: int) -> list[np.ndarray]:
    """Disjoint, seeded partition of ``range(n)`` into ``n_folds`` index sets."""
    if not 1 <= n_folds <= n:
        raise ValueError(f"cannot split {n} samples into {n_folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, n_folds)]


MANIFEST = "manifest.json"


def write_dataset(ds: SimDataset, out: str | os.PathLike) -> Path:
    """Write fold tensors, true vectors and a manifest; return the manifest path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seqs = fold_seeds(ds.spec.seed, ds.spec.n_folds)
    folds = []
    for k, bs in enumerate(ds.folds):
        fdir = out / f"fold_{k:02d}"
        fdir.mkdir(exist_ok=True)
        files = []
        for l, block in enumerate(bs.blocks):
            name = f"fold_{k:02d}/block_{l}.tnsr"
            write_tensor(out / name, block)
            files.append(name)
        folds.append({"fold": k, "seed": {"entropy": seqs[k + 1].entropy, "spawn_key": list(seqs[k + 1].spawn_key)}, "blocks": files})
    (out / "truth").mkdir(exist_ok=True)
    truth = []
    for l, shape in enumerate(ds.truth):
        name = f"truth/block_{l}.tnsr"
        write_tensor(out / name, shape.mask)
        truth.append({"block": l, "shape": shape.name, "rank": shape.cp.rank, "file": name})
    manifest = {
        "kind": "tgcca-simulation",
        "format": "TNSRv1",
        "spec": ds.spec.to_dict(),
        "snr_db": SNR_DB.get(ds.spec.eta),
        "folds": folds,
        "truth": truth,
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(data_dir: str | os.PathLike) -> tuple[dict, list[BlockSet], list[np.ndarray]]:
    """Load a written dataset: manifest, per-fold blocks and true vectors (vectorized)."""
    data_dir = Path(data_dir)
    path = data_dir / MANIFEST
    if not path.exists():
        raise ConfigError(f"no {MANIFEST} in {data_dir}")
    manifest = json.loads(path.read_text())
    folds = [BlockSet(tuple(read_array(data_dir / f) for f in fold["blocks"])) for fold in manifest["folds"]]
    truth = [mode1_vectorize(read_array(data_dir / t["file"])) for t in manifest["truth"]]
    for bs in folds:
        if [tuple(d) for d in bs.dims] != [tuple(b["dims"]) for b in manifest["spec"]["blocks"]]:
            raise ConfigError("fold tensors do not match the dims in the manifest")
    return manifest, folds, truth
