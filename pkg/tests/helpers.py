"""Random problem builders shared by the solver and acceptance tests."""

import numpy as np

from tgcca.model import BlockSet, SolverOptions, preprocess
from tgcca.solver import prepare


def random_blockset(rng, L, d, n=40, low=2, high=5, shared=True):
    z = rng.standard_normal(n)
    blocks = []
    for _ in range(L):
        dims = tuple(int(p) for p in rng.integers(low, high + 1, size=d))
        x = rng.standard_normal((n,) + dims)
        if shared:
            x += np.multiply.outer(z, rng.standard_normal(dims))
        blocks.append(x)
    return preprocess(BlockSet(tuple(blocks)))[0]


def random_design(rng, L, diagonal=False):
    c = rng.uniform(0.2, 1.0, (L, L))
    c = np.triu(c, 1)
    c = c + c.T
    if diagonal:
        c[np.diag_indices(L)] = rng.uniform(0, 1, L)
    return c


def random_problem(rng, L=2, d=2, R=1, regime="separable", scheme="identity", n=40, **opts):
    bs = random_blockset(rng, L, d, n, low=max(2, R))
    options = SolverOptions(ranks=R, regime=regime, **opts)
    return prepare(bs, random_design(rng, L), scheme, options), options, bs
