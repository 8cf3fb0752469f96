import numpy as np
import pytest

from tgcca.io import write_tensor
from tgcca.linalg import truncated_svd
from tgcca.model import ConfigError
from tgcca.simulate import (
    SNR_DB,
    SimSpec,
    build_block_cov,
    builtin_shapes,
    make_noise,
    read_dataset,
    sample_dataset,
    split_folds,
    write_dataset,
)
from tgcca.tensor import mode1_vectorize


def test_block_cov_identity_noise():
    p, eta = 5, 0.5
    w = np.eye(p)[1]
    cov = build_block_cov(w, eta, np.eye(p))
    proj = np.eye(p) - np.outer(w, w)
    assert np.allclose(cov, np.outer(w, w) + proj / (eta * np.sqrt(p - 1)), atol=1e-15)
    assert w @ cov @ w == pytest.approx(1.0, abs=1e-12)


def test_block_cov_limits(rng):
    w = rng.standard_normal(6)
    t = make_noise(6, None, rng)
    s = np.outer(w, w) / (w @ w) ** 2
    assert np.allclose(build_block_cov(w, 1e9, t), s, atol=1e-8)
    for eta in (0.1, 1.0, 3.0):
        cov = build_block_cov(w, eta, t)
        assert w @ cov @ w == pytest.approx(1.0, abs=1e-10)
        assert np.linalg.norm(cov - s) / np.linalg.norm(s) == pytest.approx(1 / eta, rel=1e-10)
        assert np.linalg.eigvalsh(cov)[0] >= -1e-12
    assert np.array_equal(build_block_cov(w, 1.0, np.zeros((6, 0))), s)


def test_make_noise(rng):
    t = make_noise(6, None, rng)
    assert np.allclose(np.triu(t[:, :6], 1), 0)
    assert np.linalg.norm(t @ t.T) == pytest.approx(1.0)
    shape = np.zeros((2, 3))
    shape[0, 1] = shape[1, 2] = 1.0
    ts = make_noise(6, shape, rng, unstructured=False)
    assert np.linalg.matrix_rank(ts @ ts.T) == 1
    both = make_noise(6, shape, rng)
    u, s = both[:, :6], both[:, 6:]
    assert np.linalg.norm(u @ u.T) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(s @ s.T) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(both @ both.T)[0] >= -1e-12
    with pytest.raises(ConfigError):
        make_noise(6, np.zeros((2, 3)), rng)


def test_rect_shape():
    s = builtin_shapes("rect", (6, 6), ranges=[(1, 4), (2, 5)])
    expected = np.zeros((6, 6))
    expected[1:4, 2:5] = 1
    assert np.array_equal(s.mask, expected)
    assert s.cp.rank == 1
    assert np.allclose(s.cp.factors[0][:, 0], expected[:, 2] / np.sqrt(3))
    assert np.allclose(s.cp.reconstruct(), s.vector, atol=1e-14)
    cube = builtin_shapes("rect", (4, 5, 3))
    assert np.allclose(cube.cp.reconstruct(), cube.vector)


def test_cross_shape():
    s = builtin_shapes("cross", (19, 19))
    assert set(np.unique(s.mask)) == {0.0, 1.0}
    assert np.linalg.matrix_rank(s.mask) == 2 and s.cp.rank == 2
    assert np.max(np.abs(s.cp.reconstruct() - s.vector)) <= 1e-12
    assert np.allclose(s.cp.factors[0].T @ s.cp.factors[0], np.eye(2), atol=1e-12)
    assert np.allclose(s.cp.factors[1].T @ s.cp.factors[1], np.eye(2), atol=1e-12)
    with pytest.raises(ConfigError):
        builtin_shapes("cross", (3, 10))


def test_diag_band_and_user_file(tmp_path, rng):
    s = builtin_shapes("diag-band", (20, 18))
    assert s.cp.rank >= 3
    assert np.allclose(s.cp.reconstruct(), s.vector, atol=1e-10)
    mask = np.outer(rng.standard_normal(5), rng.standard_normal(4)) + np.outer(rng.standard_normal(5), rng.standard_normal(4))
    write_tensor(tmp_path / "m.tnsr", mask)
    u = builtin_shapes("user-file", (5, 4), path=str(tmp_path / "m.tnsr"))
    sv = truncated_svd(mask, 4).singular
    assert u.cp.rank == int(np.sum(sv > 1e-10 * sv[0])) == 2
    with pytest.raises(ConfigError):
        builtin_shapes("user-file", (4, 5), path=str(tmp_path / "m.tnsr"))
    with pytest.raises(ConfigError):
        builtin_shapes("star", (5, 5))


def _spec(**kw):
    base = dict(blocks=[{"dims": [4, 3], "shape": "rect"}, {"dims": [3, 3], "shape": "rect"}], eta=1.0, n=100, n_folds=2, seed=1)
    base.update(kw)
    return SimSpec.from_dict(base)


def test_sample_covariance_converges():
    spec = _spec(n=100_000, n_folds=1)
    ds = sample_dataset(spec)
    for l, block in enumerate(ds.folds[0].blocks):
        x = block.reshape(spec.n, -1, order="F")
        emp = x.T @ x / spec.n
        assert np.linalg.norm(emp - ds.covariances[l], 2) < 0.05


def test_independent_blocks_when_rho_zero():
    spec = SimSpec.from_dict(dict(blocks=[{"dims": [4, 3], "rho": 0.0}, {"dims": [3, 3], "rho": 0.0}], n=4000, n_folds=1, seed=2))
    ds = sample_dataset(spec)
    ys = [b.reshape(spec.n, -1, order="F") @ s.vector for b, s in zip(ds.folds[0].blocks, ds.truth)]
    assert abs(ys[0] @ ys[1] / spec.n) < 4 / np.sqrt(spec.n)


def test_full_correlation_limit():
    spec = SimSpec.from_dict(dict(blocks=[{"dims": [4, 3], "rho": 1.0}, {"dims": [3, 3], "rho": 1.0}], eta=1e9, n=10_000, n_folds=1, seed=3))
    ds = sample_dataset(spec)
    ys = [b.reshape(spec.n, -1, order="F") @ s.vector for b, s in zip(ds.folds[0].blocks, ds.truth)]
    assert np.corrcoef(ys)[0, 1] >= 0.99


def test_pairwise_correlation_and_cross_cov():
    spec = _spec(n=200_000, n_folds=1)
    assert spec.blocks[0].rho ** 2 == pytest.approx(0.8)
    ds = sample_dataset(spec)
    ys = [b.reshape(spec.n, -1, order="F") @ s.vector for b, s in zip(ds.folds[0].blocks, ds.truth)]
    assert np.corrcoef(ys)[0, 1] == pytest.approx(0.8, abs=0.01)
    w = [s.vector for s in ds.truth]
    cross = np.outer(ds.loadings[0], ds.loadings[1])
    formula = 0.8 * ds.covariances[0] @ np.outer(w[0], w[1]) @ ds.covariances[1]
    assert np.allclose(cross, formula, atol=1e-10)


def test_rho_validation():
    with pytest.raises(ConfigError):
        SimSpec.from_dict(dict(blocks=[{"dims": [3, 3], "rho": 1.5}, {"dims": [3, 3]}]))
    with pytest.raises(ConfigError):
        SimSpec.from_dict(dict(blocks=[{"dims": [3, 3]}, {"dims": [3, 3]}], snr_db=-3))
    assert SimSpec.from_dict(dict(blocks=[{"dims": [3, 3]}, {"dims": [3, 3]}], snr_db=-20)).eta == 0.1
    assert SNR_DB == {0.1: -20.0, 0.3: -10.5, 0.5: -6.0, 1.0: 0.0}


def test_determinism_and_roundtrip(tmp_path):
    a, b = sample_dataset(_spec()), sample_dataset(_spec())
    for fa, fb in zip(a.folds, b.folds):
        assert all(np.array_equal(x, y) for x, y in zip(fa.blocks, fb.blocks))
    write_dataset(a, tmp_path / "d")
    manifest, folds, truth = read_dataset(tmp_path / "d")
    assert len(folds) == 2 and manifest["spec"]["n"] == 100
    assert np.array_equal(folds[1].blocks[0], a.folds[1].blocks[0])
    assert np.array_equal(truth[1], a.truth[1].vector)
    assert not np.array_equal(a.folds[0].blocks[0], a.folds[1].blocks[0])


def test_split_folds():
    parts = split_folds(23, 4, seed=5)
    assert sorted(np.concatenate(parts).tolist()) == list(range(23))
    assert all(np.array_equal(x, y) for x, y in zip(parts, split_folds(23, 4, seed=5)))
    with pytest.raises(ValueError):
        split_folds(3, 4, 0)
