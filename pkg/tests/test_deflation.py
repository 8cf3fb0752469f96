import numpy as np
import pytest

from conftest import random_orthonormal
from helpers import random_blockset
from tgcca.deflation import (
    cosine_alignment,
    deflate_block,
    extract_components,
    nearest_rank,
    recover_shared_factors,
    rows_to_csv,
    summarize,
    summary_rows,
)
from tgcca.model import BlockSet, SolverOptions, full_design, preprocess
from tgcca.solver import fit
from tgcca.tensor import mode1_vectorize


def test_deflate_examples(rng):
    y = np.array([1.0, -1.0, 0.0, 0.0])
    x = rng.standard_normal((4, 3))
    x -= np.outer(y, y @ x) / 2  # columns orthogonal to y
    assert np.allclose(deflate_block(x, y), x, atol=1e-15)
    assert np.allclose(deflate_block(np.outer(y, [1.0, 2.0, 3.0]), y), 0, atol=1e-15)


def test_deflate_matches_regression(rng):
    x = rng.standard_normal((20, 3, 2))
    y = rng.standard_normal(20)
    out = deflate_block(x, y)
    flat = x.reshape(20, -1)
    for j in range(flat.shape[1]):
        beta = np.linalg.lstsq(y[:, None], flat[:, j], rcond=None)[0]
        assert np.allclose(out.reshape(20, -1)[:, j], flat[:, j] - y * beta[0], atol=1e-12)
    assert np.max(np.abs(out.reshape(20, -1).T @ y)) <= 1e-10
    assert np.allclose(deflate_block(out, y), out, atol=1e-12)
    assert out.shape == x.shape
    with pytest.raises(ValueError):
        deflate_block(x, np.zeros(20))


def test_single_stage_equals_fit(rng):
    bs = random_blockset(rng, 2, 2, n=30)
    opts = SolverOptions(n_starts=2)
    stack = extract_components(bs, full_design(2), "identity", opts, 1)
    best, _ = fit(bs, full_design(2), "identity", opts)
    assert stack.stages[0].trace == best.trace


def test_exhausted_rank_one_blocks(rng):
    n = 30
    z = rng.standard_normal(n)
    blocks = (np.multiply.outer(z, rng.standard_normal((3, 2))), np.multiply.outer(z, rng.standard_normal((2, 4))))
    bs = preprocess(BlockSet(blocks))[0]
    stack = extract_components(bs, full_design(2), "identity", SolverOptions(), 3)
    assert stack.stages[0] is not None
    assert stack.exhausted_at == 1 and stack.stages[1:] == [None, None]


def test_two_stage_components_orthogonal(rng):
    bs = random_blockset(rng, 3, 2, n=50)
    stack = extract_components(bs, full_design(3), "identity", SolverOptions(ranks=2), 2)
    for l in range(3):
        y = stack.block_components(l)
        g = y.T @ y
        assert abs(g[0, 1]) <= 1e-8 * np.sqrt(g[0, 0] * g[1, 1])


def test_recover_noiseless(rng):
    n, R = 12, 2
    a = rng.standard_normal((n, R))
    b, c = random_orthonormal(rng, 4, R), random_orthonormal(rng, 3, R)
    lam = np.array([2.0, 0.5])
    x = np.einsum("ir,jr,kr,r->ijk", a, b, c, lam)
    assert np.allclose(recover_shared_factors(x, b, c, lam), a, atol=1e-10)
    # orthonormal shortcut X_(1) (c ⊙ b) Λ^{-1}
    kr = np.stack([np.kron(c[:, r], b[:, r]) for r in range(R)], 1)
    assert np.allclose(recover_shared_factors(x, b, c, lam), x.reshape(n, -1, order="F") @ kr / lam, atol=1e-10)
    x1 = np.einsum("i,j,k->ijk", a[:, 0], b[:, 0], c[:, 0]) * 3.0
    assert np.allclose(recover_shared_factors(x1, b[:, :1], c[:, :1], [3.0])[:, 0], a[:, 0], atol=1e-12)


def test_recover_least_squares(rng):
    n, R = 15, 2
    x = rng.standard_normal((n, 4, 3))
    b, c, lam = rng.standard_normal((4, R)), rng.standard_normal((3, R)), np.array([1.5, -0.7])
    design = np.stack([np.kron(c[:, r], b[:, r]) * lam[r] for r in range(R)], 1)
    oracle = np.linalg.lstsq(design, x.reshape(n, -1, order="F").T, rcond=None)[0].T
    assert np.allclose(recover_shared_factors(x, b, c, lam), oracle, atol=1e-10)
    with pytest.raises(ValueError):
        recover_shared_factors(x, b, c, [1.0, 0.0])
    with pytest.raises(np.linalg.LinAlgError):
        recover_shared_factors(x, np.ones((4, 2)), np.ones((3, 2)), [1.0, 1.0])


def test_cosine(rng):
    w = rng.standard_normal(6)
    assert cosine_alignment(w, -w) == pytest.approx(1.0)
    assert cosine_alignment([1, 0], [0, 3]) == 0.0
    e = rng.standard_normal(6)
    e -= (e @ w) / (w @ w) * w
    e *= np.linalg.norm(w) / np.linalg.norm(e)
    assert cosine_alignment(w, w + e) == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert cosine_alignment(3 * w, w + e) == cosine_alignment(w, -2 * (w + e))
    assert cosine_alignment(w, w + e) == cosine_alignment(w + e, w)
    with pytest.raises(ValueError):
        cosine_alignment(w, np.zeros(6))


def test_quantiles_and_csv():
    vals = [0.1 * k for k in range(1, 11)]
    assert nearest_rank(vals, 0.025) == pytest.approx(0.1)
    assert nearest_rank(vals, 0.975) == pytest.approx(1.0)
    assert nearest_rank(vals, 0.5) == pytest.approx(0.5)
    assert summarize(vals)["median"] == pytest.approx(0.55)
    rows = [{"model": "m", "block": 0, "fold": k, "component": 1, "cosine": 0.5 + 0.1 * k, "criterion": 1.0} for k in range(3)]
    text = rows_to_csv(("model", "fold", "cosine"), rows)
    assert text.splitlines()[0] == "model,fold,cosine" and text.splitlines()[1] == "m,0,0.5"
    (s,) = summary_rows(rows)
    assert s["count"] == 3 and s["median"] == pytest.approx(0.6)
