"""Block coordinate ascent for tensor GCCA.

Every block update maximizes the linearization of the criterion at the
current point over the block's feasible set (or at least does not decrease
it), so the criterion is monotone along the iterations. Within a block the
factor matrices are updated mode by mode and the weights last.

Two constraint regimes are supported:

``separable``
    The data are whitened beforehand by a separable ``M^{-1/2}``; the
    optimization variable ``v`` has orthonormal rank-1 terms and unit-norm
    weights.
``non-separable``
    The data are left as is; the rank-1 terms are orthonormal and the weights
    live in the ball of radius ``||M||_2^{-1/2}``. The weight update accounts
    for ``M`` through the Gram matrix ``W^T M W``.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import covariance as cov
from .linalg import ball_hyperplane_project, procrustes_solve, truncated_svd, DEGENERACY_RTOL
from .model import (
    BlockSet,
    ConfigError,
    Scheme,
    SolverOptions,
    criterion_from_components,
    get_scheme,
    gradient_from_components,
    validate_design,
    validate_scheme,
)
from .tensor import CpVector, contract_all, contract_except, fold, khatri_rao_chain

log = logging.getLogger(__name__)

STATIONARY_TOL = 1e-14


class NumericalAbort(ArithmeticError):
    """The criterion became non-finite during a fit."""


@dataclass
class PreparedProblem:
    """Blocks in optimization space plus everything a fit needs.

    ``xs[l]`` is the ``n × p_l`` matrix of block ``l`` (whitened in the
    separable regime). ``inv[l]`` maps whitened CP factors back to the
    original space. ``specs[l]`` and ``norms[l]`` are the regularization
    matrix and its spectral norm used by the non-separable weight update.
    """

    xs: list[np.ndarray]
    dims: list[tuple[int, ...]]
    c: np.ndarray
    scheme: Scheme
    regime: str
    specs: list
    norms: list[float]
    inv: list
    ranks: list[int]
    orth_modes: list[tuple[int, ...]]
    tandem: bool = True

    @property
    def n(self) -> int:
        return self.xs[0].shape[0]

    @property
    def n_blocks(self) -> int:
        return len(self.xs)

    def lambda_radius(self, l: int) -> float:
        return 1.0 if self.regime == "separable" else self.norms[l] ** -0.5

    def uses_tandem(self, l: int) -> bool:
        d = self.dims[l]
        return self.regime == "separable" and self.tandem and len(d) == 2 and self.ranks[l] <= min(d)


def prepare(bs: BlockSet, c, scheme, options: SolverOptions, regularization: str = "auto") -> PreparedProblem:
    """Estimate regularization matrices and whiten (separable regime).

    ``regularization`` is ``"auto"`` (separable estimate in the separable
    regime, ``Σ̂ + τI`` otherwise), ``"identity"``, ``"full"`` or
    ``"separable"``. Blocks are expected to be preprocessed already.
    """
    c = validate_design(c, bs.n_blocks)
    scheme = get_scheme(scheme)
    validate_scheme(scheme, c)
    dims = bs.dims
    options.validate_for(dims)
    taus = options.block_taus(bs.n_blocks)
    kind = regularization
    if kind == "auto":
        kind = "separable" if options.regime == "separable" else "full"
    if kind not in ("identity", "full", "separable"):
        raise ConfigError(f"unknown regularization {regularization!r}")
    xs, specs, norms, invs = [], [], [], []
    for l, block in enumerate(bs.blocks):
        if not np.all(np.isfinite(block)):
            raise NumericalAbort(f"block {l} has non-finite entries")
        block_kind = kind
        if options.regime == "separable" and kind == "full":
            if len(dims[l]) != 1:
                raise ConfigError(f"block {l}: a full regularization matrix is not separable for a {len(dims[l])}-mode block")
            block_kind = "separable"
        spec = cov.estimate(block, block_kind, taus[l])
        specs.append(spec)
        norms.append(cov.spec_spectral_norm(spec))
        if options.regime == "separable":
            white, inv = cov.whiten_block(block, spec)
            xs.append(white.reshape(white.shape[0], -1, order="F"))
            invs.append(inv)
        else:
            xs.append(block.reshape(block.shape[0], -1, order="F"))
            invs.append(None)
    return PreparedProblem(
        xs=xs,
        dims=dims,
        c=c,
        scheme=scheme,
        regime=options.regime,
        specs=specs,
        norms=norms,
        inv=invs,
        ranks=options.block_ranks(bs.n_blocks),
        orth_modes=options.orth_modes(dims),
        tandem=options.tandem,
    )


@dataclass
class InnerState:
    problem: PreparedProblem
    weights: list[np.ndarray]
    factors: list[list[np.ndarray]]
    ys: list[np.ndarray] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    stationary: set = field(default_factory=set)

    def __post_init__(self):
        if not self.ys:
            self.ys = [self.problem.xs[l] @ self.vector(l) for l in range(self.problem.n_blocks)]

    def vector(self, l: int) -> np.ndarray:
        return khatri_rao_chain(self.factors[l]) @ self.weights[l]

    def refresh(self, l: int) -> None:
        self.ys[l] = self.problem.xs[l] @ self.vector(l)

    def gradient(self, l: int) -> np.ndarray:
        p = self.problem
        return gradient_from_components(p.xs[l], self.ys, p.c, p.scheme, l)

    def criterion(self) -> float:
        p = self.problem
        return criterion_from_components(self.ys, p.c, p.scheme, p.n)

    def cp(self, l: int) -> CpVector:
        return CpVector(self.weights[l], tuple(self.factors[l]))

    def copy(self) -> "InnerState":
        return InnerState(
            self.problem,
            [w.copy() for w in self.weights],
            [[f.copy() for f in fs] for fs in self.factors],
            [y.copy() for y in self.ys],
            list(self.notes),
            set(self.stationary),
        )


def init_random(dims: Sequence[int], rank: int, orth_modes: Sequence[int], rng: np.random.Generator, radius: float = 1.0) -> CpVector:
    """Random feasible CP vector: orthonormalized factors on the orthogonal
    modes, unit columns elsewhere, weights on the sphere of ``radius``."""
    factors = []
    for m, p in enumerate(dims):
        a = rng.standard_normal((p, rank))
        if m in orth_modes:
            if rank > p:
                raise ConfigError(f"rank {rank} exceeds dimension {p} of orthogonal mode {m}")
            q, r = np.linalg.qr(a)
            a = q * np.where(np.diag(r) < 0, -1.0, 1.0)
        else:
            a = a / np.linalg.norm(a, axis=0)
        factors.append(a)
    lam = rng.standard_normal(rank)
    lam = radius * lam / np.linalg.norm(lam)
    return CpVector(lam, tuple(factors))


def initial_state(problem: PreparedProblem, rng: np.random.Generator) -> InnerState:
    starts = [
        init_random(problem.dims[l], problem.ranks[l], problem.orth_modes[l], rng, problem.lambda_radius(l))
        for l in range(problem.n_blocks)
    ]
    return state_from(problem, starts)


def state_from(problem: PreparedProblem, starts: Sequence[CpVector]) -> InnerState:
    if len(starts) != problem.n_blocks:
        raise ValueError(f"{len(starts)} starting vectors for {problem.n_blocks} blocks")
    for l, s in enumerate(starts):
        if s.dims != tuple(problem.dims[l]) or s.rank != problem.ranks[l]:
            raise ValueError(f"block {l}: starting vector has dims {s.dims} and rank {s.rank}")
    return InnerState(problem, [s.weights.copy() for s in starts], [[f.copy() for f in s.factors] for s in starts])


# ---------------------------------------------------------------------------
# Block updates


def mode_target(state: InnerState, l: int, m: int, grad: np.ndarray) -> np.ndarray:
    """The ``p_m × R`` matrix ``F`` with columns ``λ_r V_{(-m)}^{(r)T} ∇``."""
    g = fold(grad, state.problem.dims[l])
    return contract_except(g, state.factors[l], m) * state.weights[l][None, :]


def update_mode_separable(state: InnerState, l: int, m: int, grad: np.ndarray | None = None) -> np.ndarray:
    """Update factor matrix ``m`` of block ``l`` in place and return it.

    Orthogonal modes take the Procrustes maximizer of ``Tr(F^T V)``; the other
    modes take normalized columns of ``F``.
    """
    if grad is None:
        grad = state.gradient(l)
    f = mode_target(state, l, m, grad)
    old = state.factors[l][m]
    if m in state.problem.orth_modes[l]:
        new, unique = procrustes_solve(f)
        if not unique:
            state.notes.append(f"block {l} mode {m}: rank-deficient Procrustes input, update not unique")
    else:
        norms = np.linalg.norm(f, axis=0)
        new = old.copy()
        ok = norms > 0
        new[:, ok] = f[:, ok] / norms[ok]
    state.factors[l][m] = new
    return new


def _weights_target(state: InnerState, l: int, grad: np.ndarray) -> np.ndarray:
    return contract_all(fold(grad, state.problem.dims[l]), state.factors[l])


def update_lambda_separable(state: InnerState, l: int, grad: np.ndarray | None = None) -> np.ndarray:
    """``λ ← V^T∇ / ||V^T∇||``, computed by contracting the folded gradient."""
    if grad is None:
        grad = state.gradient(l)
    u = _weights_target(state, l, grad)
    nu = np.linalg.norm(u)
    if nu <= STATIONARY_TOL:
        state.stationary.add(l)
        return state.weights[l]
    state.weights[l] = u / nu
    return state.weights[l]


def update_matrix_block(state: InnerState, l: int, grad: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One tandem step for a matrix block: ``V_1, V_2, λ ← S, T, δ/||δ||`` from
    the rank-``R`` SVD of the reshaped gradient."""
    if grad is None:
        grad = state.gradient(l)
    dims = state.problem.dims[l]
    if len(dims) != 2:
        raise ValueError(f"block {l} has {len(dims)} modes; the tandem update needs a matrix block")
    f = fold(grad, dims)
    svd = truncated_svd(f, state.problem.ranks[l])
    top = np.linalg.norm(svd.singular)
    if top <= STATIONARY_TOL:
        state.stationary.add(l)
        return state.factors[l][0], state.factors[l][1], state.weights[l]
    if svd.singular[-1] <= DEGENERACY_RTOL * svd.singular[0]:
        state.notes.append(f"block {l}: degenerate R-th singular value, tandem update not unique")
    state.factors[l][0] = svd.left
    state.factors[l][1] = svd.right
    state.weights[l] = svd.singular / top
    return svd.left, svd.right, state.weights[l]


def nonseparable_lambda(u: np.ndarray, lam_prev: np.ndarray, gram: np.ndarray, norm_m: float) -> tuple[np.ndarray, str]:
    """Weight update of the non-separable regime.

    Returns the new weights and which branch produced them (``"ref"``,
    ``"projection"``, ``"fallback"`` or ``"stationary"``).
    """
    alpha = 1.0 / norm_m
    radius = np.sqrt(alpha)
    nu = float(np.linalg.norm(u))
    if nu <= STATIONARY_TOL:
        return lam_prev, "stationary"
    lam_opt = radius * u / nu
    level = 0.5 * (float(u @ lam_prev) + radius * nu)
    try:
        chol = np.linalg.cholesky(0.5 * (gram + gram.T))
        x = np.linalg.solve(chol.T, np.linalg.solve(chol, u))
        if np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
    except np.linalg.LinAlgError:
        return lam_opt, "fallback"
    lam_ref = x / np.sqrt(float(u @ x))
    cand = radius * lam_ref / np.linalg.norm(lam_ref)
    if float(u @ cand) >= level:
        return cand, "ref"
    return ball_hyperplane_project(lam_ref, u, alpha, level), "projection"


def update_lambda_nonseparable(state: InnerState, l: int, grad: np.ndarray | None = None) -> np.ndarray:
    if grad is None:
        grad = state.gradient(l)
    p = state.problem
    u = _weights_target(state, l, grad)
    gram = cov.factor_gram(p.specs[l], state.factors[l])
    lam, branch = nonseparable_lambda(u, state.weights[l], gram, p.norms[l])
    if branch == "stationary":
        state.stationary.add(l)
    elif branch == "fallback":
        state.notes.append(f"block {l}: W^T M W is numerically singular, used the unstructured weights")
    state.weights[l] = lam
    return lam


def update_nonseparable(state: InnerState, l: int, monitor: Callable | None = None) -> tuple[list[np.ndarray], np.ndarray]:
    """Mode-wise Procrustes/normalization updates followed by the weight update."""
    p = state.problem
    self_loop = p.c[l, l] != 0
    grad = state.gradient(l)
    for m in range(len(p.dims[l])):
        update_mode_separable(state, l, m, grad)
        state.refresh(l)
        if monitor:
            monitor(state, l, f"mode{m}")
        if self_loop:
            grad = state.gradient(l)
    update_lambda_nonseparable(state, l, grad)
    state.refresh(l)
    if monitor:
        monitor(state, l, "lambda")
    return state.factors[l], state.weights[l]


def update_block(state: InnerState, l: int, monitor: Callable | None = None) -> None:
    p = state.problem
    if p.regime == "non-separable":
        update_nonseparable(state, l, monitor)
        return
    grad = state.gradient(l)
    if p.uses_tandem(l):
        update_matrix_block(state, l, grad)
        state.refresh(l)
        if monitor:
            monitor(state, l, "tandem")
        return
    self_loop = p.c[l, l] != 0
    for m in range(len(p.dims[l])):
        update_mode_separable(state, l, m, grad)
        state.refresh(l)
        if monitor:
            monitor(state, l, f"mode{m}")
        if self_loop:
            grad = state.gradient(l)
    update_lambda_separable(state, l, grad)
    state.refresh(l)
    if monitor:
        monitor(state, l, "lambda")


# ---------------------------------------------------------------------------
# Fits


@dataclass
class FitResult:
    """Outcome of one fit.

    ``vectors`` are the canonical vectors in the original variable space;
    ``optimized`` are the CP vectors actually optimized (whitened space in
    the separable regime). ``trace[0]`` is the criterion at the start.
    ``last_step`` is ``sum_l ||v_l^{s+1} - v_l^s||`` over the last sweep, each
    term divided by the radius of the block's weight constraint.
    """

    vectors: list[CpVector]
    optimized: list[CpVector]
    components: list[np.ndarray]
    trace: list[float]
    iterations: int
    converged: bool
    notes: list[str]
    seconds: float
    seed: int | None = None
    last_step: float = float("nan")
    stationary: list[int] = field(default_factory=list)

    @property
    def criterion(self) -> float:
        return self.trace[-1]

    def canonical_vector(self, l: int) -> np.ndarray:
        return self.vectors[l].reconstruct()


def _result(state: InnerState, trace, iterations, converged, t0, seed, last_step) -> FitResult:
    p = state.problem
    optimized = [state.cp(l) for l in range(p.n_blocks)]
    vectors = [
        CpVector(state.weights[l], cov.unwhiten_factors(p.inv[l], state.factors[l])) for l in range(p.n_blocks)
    ]
    return FitResult(
        vectors=vectors,
        optimized=optimized,
        components=[y.copy() for y in state.ys],
        trace=list(trace),
        iterations=iterations,
        converged=converged,
        notes=list(state.notes),
        seconds=time.perf_counter() - t0,
        seed=seed,
        last_step=last_step,
        stationary=sorted(state.stationary),
    )


def bca_fit(
    problem: PreparedProblem,
    options: SolverOptions,
    start: Sequence[CpVector] | InnerState | None = None,
    monitor: Callable | None = None,
    seed: int | None = None,
) -> FitResult:
    """Run the block coordinate ascent until the criterion gain drops below
    ``options.eps`` or ``options.max_iter`` sweeps are done.

    ``monitor(state, l, step)`` is called after every single update.
    """
    t0 = time.perf_counter()
    seed = options.seed if seed is None else seed
    if start is None:
        state = initial_state(problem, np.random.default_rng(seed))
    elif isinstance(start, InnerState):
        state = start.copy()
    else:
        state = state_from(problem, start)
    f_prev = state.criterion()
    if not np.isfinite(f_prev):
        raise NumericalAbort(f"criterion at the starting point is {f_prev}; check the blocks for non-finite values")
    trace = [f_prev]
    converged = False
    it = 0
    last_step = float("nan")
    for it in range(1, options.max_iter + 1):
        before = [state.vector(l) for l in range(problem.n_blocks)]
        for l in range(problem.n_blocks):
            try:
                update_block(state, l, monitor)
            except np.linalg.LinAlgError as exc:
                raise NumericalAbort(f"iteration {it}, block {l}: {exc}") from exc
        f_new = state.criterion()
        if not np.isfinite(f_new):
            raise NumericalAbort(
                f"criterion became {f_new} at iteration {it} (previous {f_prev}); "
                f"component norms {[float(np.linalg.norm(y)) for y in state.ys]}"
            )
        trace.append(f_new)
        # measured relative to each block's feasible radius so the regimes compare
        last_step = float(sum(
            np.linalg.norm(state.vector(l) - before[l]) / problem.lambda_radius(l) for l in range(problem.n_blocks)
        ))
        if f_new - f_prev < options.eps:
            converged = True
            break
        f_prev = f_new
    log.debug("fit seed=%s: %d iterations, criterion %.12g, converged=%s", seed, it, trace[-1], converged)
    return _result(state, trace, it, converged, t0, seed, last_step)


def multi_start_fit(problem: PreparedProblem, options: SolverOptions, threads: int = 1) -> tuple[FitResult, list[FitResult]]:
    """Run ``options.n_starts`` fits with seeds ``seed + k``; keep the best criterion.

    Ties go to the lowest start index, so the choice does not depend on
    scheduling.
    """
    seeds = [options.seed + k for k in range(options.n_starts)]
    errors: list[str] = []

    def run(s):
        try:
            return bca_fit(problem, options, seed=s)
        except NumericalAbort as exc:
            errors.append(f"seed {s}: {exc}")
            return None

    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    ok = [r for r in results if r is not None]
    if not ok:
        raise NumericalAbort("all starts aborted: " + "; ".join(sorted(errors)))
    best = max(ok, key=lambda r: r.criterion)
    return best, ok


def fit(bs: BlockSet, c, scheme, options: SolverOptions, regularization: str = "auto", threads: int = 1) -> tuple[FitResult, list[FitResult]]:
    """Prepare the problem and run the multi-start fit on already preprocessed blocks."""
    problem = prepare(bs, c, scheme, options, regularization)
    return multi_start_fit(problem, options, threads)


def constraint_residuals(state: InnerState, l: int) -> dict[str, float]:
    """Residuals of the block-``l`` constraints at the current state."""
    p = state.problem
    out = {}
    for m, f in enumerate(state.factors[l]):
        if m in p.orth_modes[l] or p.uses_tandem(l):
            out[f"orth{m}"] = float(np.linalg.norm(f.T @ f - np.eye(f.shape[1])))
        else:
            out[f"unit{m}"] = float(np.max(np.abs(np.linalg.norm(f, axis=0) - 1.0)))
    w = khatri_rao_chain(state.factors[l])
    out["gram"] = float(np.linalg.norm(w.T @ w - np.eye(w.shape[1])))
    lam_norm = float(np.linalg.norm(state.weights[l]))
    if p.regime == "separable":
        out["lambda"] = abs(lam_norm - 1.0)
    else:
        out["lambda"] = max(0.0, lam_norm - p.lambda_radius(l))
    return out
