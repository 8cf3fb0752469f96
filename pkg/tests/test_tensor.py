import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgcca.tensor import (
    CpVector,
    DenseTensor,
    contract_all,
    contract_except,
    cp_reconstruct,
    fold,
    khatri_rao,
    khatri_rao_chain,
    kronecker,
    mode1_vectorize,
    mode_fold,
    mode_matricize,
    mode_product,
)


def brute_matricize(t, m):
    # column index: remaining modes in increasing order, smallest cycling fastest
    dims = t.shape
    rest = [j for j in range(len(dims)) if j != m]
    out = np.zeros((dims[m], int(np.prod([dims[j] for j in rest]))))
    for idx in itertools.product(*[range(p) for p in dims]):
        col, stride = 0, 1
        for j in rest:
            col += idx[j] * stride
            stride *= dims[j]
        out[idx[m], col] = t[idx]
    return out


def test_matricize_matrix_cases():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(mode_matricize(a, 0), a)
    assert np.array_equal(mode_matricize(a, 1), [[1, 3], [2, 4]])


def test_matricize_2x2x2_frozen():
    t = fold(np.arange(1.0, 9.0), (2, 2, 2))
    # brute-force indexer output, frozen
    expected = np.array([[1.0, 2.0, 5.0, 6.0], [3.0, 4.0, 7.0, 8.0]])
    assert np.array_equal(mode_matricize(t, 1), expected)
    assert np.array_equal(brute_matricize(t, 1), expected)


def test_matricize_matches_brute_force(rng):
    t = rng.standard_normal((3, 4, 2, 2))
    for m in range(4):
        assert np.array_equal(mode_matricize(t, m), brute_matricize(t, m))
        assert np.array_equal(mode_fold(mode_matricize(t, m), m, t.shape), t)


def test_mode1_matricization_vectorizes(rng):
    t = rng.standard_normal((3, 2, 4))
    assert np.array_equal(mode_matricize(t, 0).ravel(order="F"), mode1_vectorize(t))


def test_matricize_bad_mode():
    with pytest.raises(ValueError):
        mode_matricize(np.zeros((2, 2)), 2)


def test_kronecker_cases(rng):
    x, y = 5.0, 7.0
    assert np.array_equal(kronecker(np.array([1.0, 0.0]), np.array([x, y])), [x, y, 0, 0])
    assert np.array_equal(kronecker(np.eye(2), np.eye(3)), np.eye(6))
    a, b = rng.standard_normal((2, 2)), rng.standard_normal((3, 3))
    k = kronecker(a, b)
    for i, j, r, s in itertools.product(range(2), range(2), range(3), range(3)):
        assert k[i * 3 + r, j * 3 + s] == pytest.approx(a[i, j] * b[r, s], abs=1e-15)


def test_khatri_rao_cases(rng):
    a, b = rng.standard_normal((3, 1)), rng.standard_normal((2, 1))
    assert np.allclose(khatri_rao(a, b), np.kron(a, b))
    kr = khatri_rao(np.eye(2), np.eye(2))
    assert np.array_equal(kr, np.array([[1, 0], [0, 0], [0, 0], [0, 1]], dtype=float))
    a, b = rng.standard_normal((3, 2)), rng.standard_normal((2, 2))
    kr = khatri_rao(a, b)
    for r in range(2):
        assert np.allclose(kr[:, r], np.kron(a[:, r], b[:, r]), rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        khatri_rao(np.ones((2, 2)), np.ones((2, 3)))


def test_cp_reconstruct_examples():
    v = CpVector(np.array([1.0]), (np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])))
    assert np.array_equal(cp_reconstruct(v), [0, 0, 1, 0])
    f = (np.array([[1.0, 1.0], [2.0, 2.0]]), np.array([[3.0, 3.0], [1.0, 1.0]]))
    one = CpVector(np.array([1.0]), (f[0][:, :1], f[1][:, :1]))
    two = CpVector(np.array([1.0, 1.0]), f)
    assert np.array_equal(two.reconstruct(), 2 * one.reconstruct())


def test_cp_reconstruct_triple_loop(rng):
    dims, R = (3, 4, 2), 3
    lam = rng.standard_normal(R)
    fs = tuple(rng.standard_normal((p, R)) for p in dims)
    t = np.zeros(dims)
    for r in range(R):
        for i, j, k in itertools.product(*map(range, dims)):
            t[i, j, k] += lam[r] * fs[0][i, r] * fs[1][j, r] * fs[2][k, r]
    v = CpVector(lam, fs)
    assert np.allclose(v.reconstruct(), mode1_vectorize(t), rtol=0, atol=1e-12)
    assert np.allclose(CpVector(2.5 * lam, fs).reconstruct(), 2.5 * v.reconstruct())


def test_cp_vector_validation():
    with pytest.raises(ValueError):
        CpVector(np.ones(2), (np.ones((3, 2)), np.ones((3, 3))))


def test_vec_outer_is_reversed_kron(rng):
    a1, a2, a3 = (x / np.linalg.norm(x) for x in (rng.standard_normal(p) for p in (2, 3, 4)))
    outer = np.multiply.outer(np.multiply.outer(a1, a2), a3)
    assert np.allclose(mode1_vectorize(outer), np.kron(a3, np.kron(a2, a1)), rtol=0, atol=1e-15)
    assert np.allclose(khatri_rao_chain([a1[:, None], a2[:, None], a3[:, None]])[:, 0], np.kron(a3, np.kron(a2, a1)))


def test_mode_product(rng):
    t = rng.standard_normal((2, 3, 2))
    assert np.array_equal(mode_product(t, 1, np.eye(3)), t)
    a = rng.standard_normal((4, 3))
    out = mode_product(t, 1, a)
    assert out.shape == (2, 4, 2)
    oracle = mode_fold(a @ mode_matricize(t, 1), 1, (2, 4, 2))
    assert np.allclose(out, oracle, rtol=0, atol=1e-13)
    dt = mode_product(DenseTensor.from_array(t), 1, a)
    assert isinstance(dt, DenseTensor) and dt.dims == (2, 4, 2)
    with pytest.raises(ValueError):
        mode_product(t, 1, np.ones((2, 2)))


def test_mode_products_commute(rng):
    t = rng.standard_normal((3, 4, 5))
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((6, 4))
    x = mode_product(mode_product(t, 0, a), 1, b)
    y = mode_product(mode_product(t, 1, b), 0, a)
    assert np.linalg.norm(x - y) <= 1e-12 * np.linalg.norm(x)


def test_contractions_match_explicit_construction(rng):
    dims, R = (3, 4, 5), 2
    g = rng.standard_normal(dims)
    fs = [rng.standard_normal((p, R)) for p in dims]
    for m in range(3):
        got = contract_except(g, fs, m)
        for r in range(R):
            t = g
            # row-vector mode products on every other mode
            for q in sorted((q for q in range(3) if q != m), reverse=True):
                t = mode_product(t, q, fs[q][:, r][None, :])
            assert np.allclose(got[:, r], t.reshape(-1), rtol=0, atol=1e-12)
            # V_(-m)^T vec(G) form
            others = [fs[q][:, [r]] if q != m else np.eye(dims[m]) for q in range(3)]
            big = others[0]
            for o in others[1:]:
                big = np.kron(o, big)
            assert np.allclose(got[:, r], big.T @ mode1_vectorize(g), rtol=0, atol=1e-12)
    u = contract_all(g, fs)
    assert np.allclose(u, khatri_rao_chain(fs).T @ mode1_vectorize(g), rtol=0, atol=1e-12)


def test_dense_tensor_contract():
    t = DenseTensor((2, 3), np.arange(6.0))
    assert t.order == 2
    assert t.to_array()[1, 2] == 5.0
    assert DenseTensor.from_array(t.to_array()) == t
    with pytest.raises(ValueError):
        DenseTensor((2, 3), np.arange(5.0))
    with pytest.raises(ValueError):
        DenseTensor((0, 3), np.arange(0.0))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_fold_roundtrip_bit_exact(dims, seed):
    t = np.random.default_rng(seed).standard_normal(dims)
    assert np.array_equal(fold(mode1_vectorize(t), dims), t)
    for m in range(len(dims)):
        assert np.array_equal(mode_fold(mode_matricize(t, m), m, dims), t)
