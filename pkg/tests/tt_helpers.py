"""Random instances shared by the tensor-train tests."""

import numpy as np

from tensorload.tt import TtMatrix, TtVector


def random_tt(rng, shape, max_rank=3):
    d = len(shape)
    ranks = [1] + [int(rng.integers(1, max_rank + 1)) for _ in range(d - 1)] + [1]
    return TtVector.random(shape, ranks, rng)


def random_shape(rng, max_dims=5, max_n=6):
    d = int(rng.integers(1, max_dims + 1))
    return tuple(int(rng.integers(2, max_n + 1)) for _ in range(d))


def spd_tt_matrix(rng, shape, coupling=0.3):
    """Symmetric, strictly diagonally dominant operator: I (x)...(x) D + sums of
    symmetric Kronecker terms with small off-diagonal mass."""
    d = len(shape)
    terms = []
    for k in range(d):
        facs = []
        for j, n in enumerate(shape):
            if j == k:
                m = rng.uniform(-1, 1, (n, n))
                m = 0.5 * (m + m.T) * coupling / n
                np.fill_diagonal(m, rng.uniform(1.0, 2.0, n))
                facs.append(m)
            else:
                facs.append(np.eye(n))
        terms.append(TtMatrix.kron(facs))
    A = terms[0]
    for t in terms[1:]:
        A = A + t
    return A
