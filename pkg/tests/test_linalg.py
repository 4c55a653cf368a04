"""Dense/sparse factorization wrappers and triplet assembly."""

import numpy as np
import pytest

from brinkhdg.linalg import (DenseFactor, SingularMatrixError, SparseBuilder,
                             dense_solve, sparse_solve)


def laplacian_1d(n):
    """Tridiagonal second-difference matrix with Dirichlet ends."""
    builder = SparseBuilder(n, n)
    for i in range(n):
        builder.add([i], [i], [2.0])
        if i + 1 < n:
            builder.add([i, i + 1], [i + 1, i], [-1.0, -1.0])
    return builder


def test_dense_identity_and_2x2():
    assert np.allclose(dense_solve(np.eye(3), np.array([1.0, 2.0, 3.0])),
                       [1.0, 2.0, 3.0])
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = dense_solve(a, np.array([5.0, 10.0]))
    assert np.allclose(a @ x, [5.0, 10.0])


def test_dense_random_spd_residual():
    rng = np.random.default_rng(3)
    g = rng.standard_normal((50, 50))
    a = g @ g.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = dense_solve(a, b)
    assert np.linalg.norm(a @ x - b) < 1e-10 * np.linalg.norm(b)


def test_dense_matrix_rhs():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((12, 12)) + 12 * np.eye(12)
    b = rng.standard_normal((12, 5))
    x = DenseFactor(a).solve(b)
    assert x.shape == (12, 5)
    assert np.abs(a @ x - b).max() < 1e-10


def test_dense_factor_once_solve_many():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((20, 20)) + 20 * np.eye(20)
    factor = DenseFactor(a)
    for _ in range(4):
        b = rng.standard_normal(20)
        assert np.allclose(a @ factor.solve(b), b)


def test_dense_empty_matrix():
    factor = DenseFactor(np.zeros((0, 0)))
    assert factor.solve(np.zeros(0)).shape == (0,)


def test_dense_rejects_singular():
    with pytest.raises(SingularMatrixError):
        dense_solve(np.zeros((3, 3)), np.ones(3))
    a = np.array([[1.0, 2.0], [2.0, 4.0]])  # rank 1
    with pytest.raises(SingularMatrixError):
        dense_solve(a, np.ones(2))
    with pytest.raises(ValueError):
        DenseFactor(np.ones((2, 3)))


def test_sparse_diagonal():
    builder = SparseBuilder(4, 4)
    builder.add(np.arange(4), np.arange(4), [1.0, 2.0, 3.0, 4.0])
    x = sparse_solve(builder, np.array([1.0, 4.0, 9.0, 16.0]))
    assert np.allclose(x, [1.0, 2.0, 3.0, 4.0])


def test_sparse_laplacian_analytic_profile():
    # -u'' = 1 with zero ends: discrete solution is the parabola
    # u_i = x_i (1 - x_i) / 2 sampled at x_i = i h, exact for this scheme
    n = 31
    h = 1.0 / (n + 1)
    x = sparse_solve(laplacian_1d(n), np.full(n, h * h))
    xs = h * np.arange(1, n + 1)
    assert np.abs(x - xs * (1.0 - xs) / 2.0).max() < 1e-12


def test_sparse_matches_dense():
    rng = np.random.default_rng(11)
    n = 200
    dense = np.zeros((n, n))
    builder = SparseBuilder(n, n)
    for _ in range(8 * n):
        i, j = rng.integers(0, n, size=2)
        v = rng.standard_normal()
        dense[i, j] += v
        builder.add([i], [j], [v])
    dense += 40 * np.eye(n)
    builder.add(np.arange(n), np.arange(n), np.full(n, 40.0))
    b = rng.standard_normal(n)
    x_sparse = sparse_solve(builder, b)
    x_dense = np.linalg.solve(dense, b)
    assert np.abs(x_sparse - x_dense).max() < 1e-10


def test_duplicate_entries_sum():
    builder = SparseBuilder(2, 2)
    builder.add([0, 0, 1], [0, 0, 1], [1.5, 2.5, 1.0])
    mat = builder.finalize()
    assert np.allclose(mat.toarray(), [[4.0, 0.0], [0.0, 1.0]])


def test_add_block_layout():
    builder = SparseBuilder(3, 3)
    block = np.array([[1.0, 2.0], [3.0, 4.0]])
    builder.add_block([2, 0], [1, 2], block)
    arr = builder.finalize().toarray()
    assert arr[2, 1] == 1.0 and arr[2, 2] == 2.0
    assert arr[0, 1] == 3.0 and arr[0, 2] == 4.0


def test_insertion_order_invariance():
    # identical entries added in different orders give bit-identical results
    entries = [(0, 0, 1e-16), (0, 0, 1.0), (0, 0, -1e-16), (1, 1, 2.0),
               (0, 1, 0.25), (1, 0, 0.25)]
    mats = []
    for perm in ([0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0], [2, 0, 3, 1, 5, 4]):
        builder = SparseBuilder(2, 2)
        for idx in perm:
            i, j, v = entries[idx]
            builder.add([i], [j], [v])
        mats.append(builder.finalize().toarray())
    assert mats[0].tobytes() == mats[1].tobytes() == mats[2].tobytes()


def test_sparse_factor_once_solve_many():
    factor = laplacian_1d(40).finalize().factor()
    rng = np.random.default_rng(12)
    mat = laplacian_1d(40).finalize()
    for _ in range(3):
        b = rng.standard_normal(40)
        x = factor.solve(b)
        assert np.linalg.norm(mat @ x - b) < 1e-11 * np.linalg.norm(b)


def test_sparse_zero_rhs():
    x = laplacian_1d(5).finalize().factor().solve(np.zeros(5))
    assert np.all(x == 0.0)


def test_sparse_rejects_singular():
    builder = SparseBuilder(3, 3)
    builder.add([0, 1], [0, 1], [1.0, 1.0])  # empty last row/column
    with pytest.raises(SingularMatrixError):
        sparse_solve(builder, np.ones(3))


def test_index_validation():
    builder = SparseBuilder(2, 2)
    builder.add([2], [0], [1.0])
    with pytest.raises(ValueError):
        builder.finalize()
    with pytest.raises(ValueError):
        builder.add([0, 1], [0], [1.0])
    with pytest.raises(ValueError):
        SparseBuilder(2, 2).add_block([0], [0], np.ones((2, 2)))
