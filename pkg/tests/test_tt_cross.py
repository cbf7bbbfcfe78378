import numpy as np
import pytest

from tensorload.tt import CrossEvaluationError, maxvol, rect_maxvol, tt_cross


def grid_fn(shape, f):
    axes = [np.linspace(0, 1, n) for n in shape]

    def fn(idx):
        return f(*[a[idx[:, k]] for k, a in enumerate(axes)])

    full = f(*np.meshgrid(*axes, indexing="ij"))
    return fn, full


def test_separable_function_is_rank_one():
    fn, full = grid_fn((8, 9), lambda x, y: np.exp(x) * np.cos(y))
    x = tt_cross(fn, (8, 9), 1e-10)
    assert x.max_rank == 1
    np.testing.assert_allclose(x.full(), full, rtol=1e-12)


def test_constant_function():
    x = tt_cross(lambda idx: np.full(len(idx), 2.5), (4, 5, 6), 1e-10)
    assert x.max_rank == 1
    np.testing.assert_allclose(x.full(), 2.5)


def test_smooth_function_matches_tabulation():
    shape = (10, 11, 12, 9)
    fn, full = grid_fn(shape, lambda a, b, c, d: 1.0 / (1.0 + a + 2 * b + c * d))
    x = tt_cross(fn, shape, 1e-9)
    assert np.linalg.norm(x.full() - full) <= 1e-7 * np.linalg.norm(full)


def test_hidden_rank_is_found():
    # A sum of separable terms whose fibers look rank one at most pivots.
    shape = (9, 9, 9, 9, 9)

    def f(a, b, c, d, e):
        return a * b + np.where(c > 0.9, 1.0, 0.0) * d * e + 0.5 * e

    fn, full = grid_fn(shape, f)
    x, rep = tt_cross(fn, shape, 1e-10, return_report=True, seed=3)
    assert np.linalg.norm(x.full() - full) <= 1e-8 * np.linalg.norm(full)
    assert rep.converged


def test_non_finite_values_are_reported():
    def fn(idx):
        v = np.ones(len(idx))
        v[(idx[:, 0] == 2) & (idx[:, 1] == 1)] = np.nan
        return v

    with pytest.raises(CrossEvaluationError):
        tt_cross(fn, (4, 4), 1e-8, init_rank=4)


def test_maxvol_dominance(rng):
    a = rng.standard_normal((40, 5))
    rows, b = maxvol(a)
    assert len(set(rows)) == 5
    np.testing.assert_allclose(b @ a[rows], a, atol=1e-10)
    assert np.max(np.abs(b)) <= 1.05 + 1e-12
    rows2, b2 = rect_maxvol(a, min_add=3, max_add=3)
    assert len(rows2) == 8
    np.testing.assert_allclose(b2 @ a[rows2], a, atol=1e-10)
