"""End-to-end runs: simulate a dataset, fit models fold by fold, evaluate, benchmark.

Every output apart from the timing files is a deterministic function of the
config and the seed.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import apply_mode_factors, estimate_separable_M, inv_sqrt_factors, kronecker_whiten_explicit
from .deflation import ALIGNMENT_COLUMNS, SUMMARY_COLUMNS, cosine_alignment, extract_components, rows_to_csv, summary_rows
from .io import read_array, write_tensor
from .model import ConfigError, SolverOptions, full_design, preprocess
from .simulate import SimSpec, read_dataset, sample_dataset, write_dataset
from .tensor import fold

log = logging.getLogger(__name__)

OPTION_KEYS = ("ranks", "regime", "tau", "eps", "max_iter", "n_starts", "seed", "orth_mode", "tandem")
MODEL_KEYS = OPTION_KEYS + ("name", "regularization", "components")
FIT_KEYS = MODEL_KEYS + ("data", "design", "scheme", "models")


def load_json(path: str | os.PathLike) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# simulate


def run_simulate(cfg: dict, out: str | os.PathLike, seed: int | None = None) -> Path:
    if seed is not None:
        cfg = dict(cfg, seed=seed)
    spec = SimSpec.from_dict(cfg)
    ds = sample_dataset(spec)
    path = write_dataset(ds, out)
    log.info("wrote %d folds of %d blocks to %s", spec.n_folds, len(spec.blocks), out)
    return path


# ---------------------------------------------------------------------------
# fit


@dataclass(frozen=True)
class ModelSpec:
    name: str
    options: SolverOptions
    regularization: str = "auto"
    components: int = 1


def parse_fit_config(cfg: dict, seed: int | None = None) -> tuple[list[ModelSpec], object, str]:
    """Return the model list, design (``"full"`` or a matrix) and scheme name.

    Top-level option keys are defaults for every entry of ``models``; without
    ``models`` a single model named ``"model"`` is fitted.
    """
    unknown = set(cfg) - set(FIT_KEYS)
    if unknown:
        raise ConfigError(f"unknown fit config keys {sorted(unknown)}")
    base = {k: cfg[k] for k in MODEL_KEYS if k in cfg and k != "name"}
    entries = cfg.get("models") or [{"name": cfg.get("name", "model")}]
    models = []
    for i, entry in enumerate(entries):
        bad = set(entry) - set(MODEL_KEYS)
        if bad:
            raise ConfigError(f"model {i}: unknown keys {sorted(bad)}")
        merged = {**base, **entry}
        if seed is not None:
            merged["seed"] = seed
        opts = SolverOptions(**{k: merged[k] for k in OPTION_KEYS if k in merged})
        name = str(merged.get("name", f"model{i}"))
        comps = int(merged.get("components", 1))
        if comps < 1:
            raise ConfigError(f"model {name}: components must be >= 1")
        models.append(ModelSpec(name, opts, merged.get("regularization", "auto"), comps))
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError(f"model names must be unique, got {names}")
    return models, cfg.get("design", "full"), cfg.get("scheme", "identity")


def _design(design, n_blocks: int) -> np.ndarray:
    if design == "full":
        return full_design(n_blocks)
    return np.asarray(design, dtype=np.float64)


def _fit_fold(model: ModelSpec, bs, c, scheme):
    t0 = time.perf_counter()
    pre, _ = preprocess(bs)
    stack = extract_components(pre, c, scheme, model.options, model.components, model.regularization)
    return stack, time.perf_counter() - t0


def run_fit(cfg: dict, data_dir: str | os.PathLike, out: str | os.PathLike, threads: int = 1, seed: int | None = None) -> Path:
    """Fit every model on every fold; write vectors, traces, alignment and summary tables."""
    models, design, scheme = parse_fit_config(cfg, seed)
    manifest_in, folds, truth = read_dataset(data_dir)
    n_blocks = folds[0].n_blocks
    c = _design(design, n_blocks)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    tasks = [(m, k) for m in models for k in range(len(folds))]

    def work(task):
        m, k = task
        return _fit_fold(m, folds[k], c, scheme)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    align, timing, fits, traces = [], [], [], []
    for (m, k), (stack, seconds) in zip(tasks, results):
        timing.append({"model": m.name, "fold": k, "seconds": seconds})
        fold_dir = out / m.name / f"fold_{k:02d}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        entry = {"model": m.name, "fold": k, "stages": []}
        for j, stage in enumerate(stack.stages):
            if stage is None:
                entry["stages"].append(None)
                continue
            files = []
            for l, cp in enumerate(stage.vectors):
                w = cp.reconstruct()
                name = f"{m.name}/fold_{k:02d}/w_c{j + 1}_b{l}.tnsr"
                write_tensor(out / name, fold(w, cp.dims))
                files.append(name)
                align.append({
                    "model": m.name, "block": l, "fold": k, "component": j + 1,
                    "cosine": cosine_alignment(truth[l], w), "criterion": stage.criterion,
                })
            entry["stages"].append({
                "criterion": stage.criterion,
                "iterations": stage.iterations,
                "converged": stage.converged,
                "seed": stage.seed,
                "notes": stage.notes,
                "vectors": files,
            })
        fits.append(entry)
        if stack.starts:
            traces.append({
                "model": m.name,
                "fold": k,
                "starts": [{"seed": f.seed, "criterion": f.criterion, "trace": f.trace} for f in stack.starts[0]],
            })

    (out / "alignment.csv").write_text(rows_to_csv(ALIGNMENT_COLUMNS, align))
    (out / "summary.csv").write_text(rows_to_csv(SUMMARY_COLUMNS, summary_rows(align)))
    (out / "timing.csv").write_text(rows_to_csv(("model", "fold", "seconds"), timing))
    write_json(out / "traces.json", traces)
    manifest = {
        "kind": "tgcca-fit",
        "version": __version__,
        "config": cfg,
        "seed_override": seed,
        "data": {"dir": str(Path(data_dir).resolve()), "spec": manifest_in["spec"]},
        "fits": fits,
        "files": ["alignment.csv", "summary.csv", "timing.csv", "traces.json"],
    }
    write_json(out / "manifest.json", manifest)
    return out / "manifest.json"


# ---------------------------------------------------------------------------
# eval


def run_eval(run_dir: str | os.PathLike, data_dir: str | os.PathLike | None = None, out: str | os.PathLike | None = None) -> tuple[str, str]:
    """Recompute alignment and summary tables from the vectors saved by a fit.

    Returns the two CSV texts; with ``out`` they are also written there.
    """
    run_dir = Path(run_dir)
    path = run_dir / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no fit manifest in {run_dir}")
    manifest = json.loads(path.read_text())
    _, _, truth = read_dataset(data_dir if data_dir is not None else manifest["data"]["dir"])
    rows = []
    for entry in manifest["fits"]:
        for j, stage in enumerate(entry["stages"]):
            if stage is None:
                continue
            for l, name in enumerate(stage["vectors"]):
                w = read_array(run_dir / name).ravel(order="F")
                rows.append({
                    "model": entry["model"], "block": l, "fold": entry["fold"], "component": j + 1,
                    "cosine": cosine_alignment(truth[l], w), "criterion": stage["criterion"],
                })
    align = rows_to_csv(ALIGNMENT_COLUMNS, rows)
    summary = rows_to_csv(SUMMARY_COLUMNS, summary_rows(rows))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "alignment.csv").write_text(align)
        (out / "summary.csv").write_text(summary)
    return align, summary


# ---------------------------------------------------------------------------
# bench


BENCH_DEFAULTS = {"q": [10, 20, 30], "d": [1, 2, 3], "n": 100, "tau": 1e-3, "seed": 0, "repeats": 1, "check_max_p": 8000}


def _time(fn, repeats: int):
    best, out = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_case(q: int, d: int, n: int, tau: float, rng: np.random.Generator, repeats: int = 1, check: bool = True) -> dict:
    """Time whitening of one ``n × q^d`` block by mode products and by the
    explicit Kronecker ``M^{-1/2}``.

    Both paths start from the raw block and include estimating the separable
    factors and their inverse square roots.
    """
    block = rng.standard_normal((n,) + (q,) * d)

    def separable():
        inv = inv_sqrt_factors(estimate_separable_M(block, tau))
        return apply_mode_factors(block, inv)

    def explicit():
        inv = inv_sqrt_factors(estimate_separable_M(block, tau))
        return kronecker_whiten_explicit(block, inv)

    t_sep, a = _time(separable, repeats)
    t_exp, b = _time(explicit, repeats)
    rec = {"q": q, "d": d, "p": q**d, "n": n, "separable_s": t_sep, "explicit_s": t_exp, "ratio": t_exp / t_sep}
    if check:
        rec["max_rel_diff"] = float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
    return rec


def run_bench(cfg: dict, seed: int | None = None) -> dict:
    unknown = set(cfg) - set(BENCH_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown bench config keys {sorted(unknown)}")
    c = {**BENCH_DEFAULTS, **cfg}
    if seed is not None:
        c["seed"] = seed
    rng = np.random.default_rng(c["seed"])
    cases = []
    for d in c["d"]:
        for q in c["q"]:
            if int(d) < 1 or int(q) < 1:
                raise ConfigError("q and d must be positive")
            rec = bench_case(int(q), int(d), int(c["n"]), float(c["tau"]), rng, int(c["repeats"]), q**d <= c["check_max_p"])
            log.info("q=%d d=%d: separable %.4fs explicit %.4fs ratio %.1f", q, d, rec["separable_s"], rec["explicit_s"], rec["ratio"])
            cases.append(rec)
    return {"kind": "tgcca-bench", "version": __version__, "config": c, "cases": cases}
