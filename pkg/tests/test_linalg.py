"""Counted primitives, CSR validation, dense factorization, matrix text IO."""

import numpy as np
import pytest

from metasolve.linalg import (
    CostCounter,
    DimensionError,
    LuFactorization,
    SingularMatrixError,
    SparseMatrix,
    axpy,
    csr_lincomb,
    dense_factor_solve,
    dense_matvec,
    dense_matvec_t,
    dot,
    load_matrix_text,
    lu_factor_macs,
    lu_solve_macs,
    norm2,
    save_matrix_text,
    scale,
    spmv,
    vmul,
)


def test_spmv_small_example():
    a = SparseMatrix.from_dense(np.array([[2.0, 0.0], [1.0, 3.0]]))
    counter = CostCounter()
    y = spmv(a, np.array([1.0, 1.0]), counter)
    assert np.array_equal(y, [2.0, 4.0])
    assert counter.macs == 3  # one per stored nonzero


def test_spmv_dimension_mismatch():
    a = SparseMatrix.identity(3)
    with pytest.raises(DimensionError):
        spmv(a, np.ones(4))


def test_spmv_macs_accumulate_exactly():
    rng = np.random.default_rng(7)
    a = SparseMatrix.from_dense(rng.random((6, 6)) * (rng.random((6, 6)) < 0.4))
    counter = CostCounter()
    for _ in range(5):
        spmv(a, rng.random(6), counter)
    assert counter.macs == 5 * a.nnz


def test_spmv_matches_dense_product():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, m = rng.integers(1, 12, size=2)
        dense = rng.standard_normal((n, m)) * (rng.random((n, m)) < 0.5)
        a = SparseMatrix.from_dense(dense)
        x = rng.standard_normal(m)
        assert np.allclose(spmv(a, x), dense @ x, atol=1e-13)


def test_vector_primitives_values_and_charges():
    counter = CostCounter()
    x = np.array([3.0, 4.0])
    y = np.array([1.0, 1.0])
    assert dot(x, y, counter) == 7.0
    assert norm2(x, counter) == 5.0
    axpy(2.0, x, y, counter)
    assert np.array_equal(y, [7.0, 9.0])
    assert np.array_equal(scale(0.5, x, counter), [1.5, 2.0])
    assert np.array_equal(vmul(x, x, counter), [9.0, 16.0])
    assert counter.macs == 5 * 2


def test_vector_primitive_length_mismatch():
    with pytest.raises(DimensionError):
        dot(np.ones(2), np.ones(3))
    with pytest.raises(DimensionError):
        axpy(1.0, np.ones(2), np.ones(3))
    with pytest.raises(DimensionError):
        vmul(np.ones(2), np.ones(3))


def test_dense_factor_solve_hand_example():
    # [[4, 1], [1, 3]] x = (1, 2) has the exact solution (1/11, 7/11).
    a = SparseMatrix.from_dense(np.array([[4.0, 1.0], [1.0, 3.0]]))
    x = dense_factor_solve(a, np.array([1.0, 2.0]))
    assert np.allclose(x, [1.0 / 11.0, 7.0 / 11.0], atol=1e-15)


def test_dense_factor_solve_rejects_singular():
    a = SparseMatrix.from_dense(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        dense_factor_solve(a, np.ones(2))


def test_dense_factor_solve_rejects_rectangular():
    a = SparseMatrix.from_dense(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        dense_factor_solve(a, np.ones(3))


def test_lu_charges_follow_formulas():
    assert lu_factor_macs(3) == 8  # 3*2*5/6 + 3*2/2
    assert lu_solve_macs(3) == 9
    rng = np.random.default_rng(3)
    a = SparseMatrix.from_dense(rng.standard_normal((5, 5)) + 5 * np.eye(5))
    counter = CostCounter()
    dense_factor_solve(a, rng.standard_normal(5), counter)
    assert counter.macs == lu_factor_macs(5) + lu_solve_macs(5)


def test_lu_factorization_reuse_and_release():
    rng = np.random.default_rng(4)
    dense = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    a = SparseMatrix.from_dense(dense)
    counter = CostCounter()
    fact = LuFactorization.from_sparse(a, counter)
    for _ in range(3):
        b = rng.standard_normal(6)
        assert np.allclose(fact.solve(b, counter), np.linalg.solve(dense, b), atol=1e-10)
    assert counter.macs == lu_factor_macs(6) + 3 * lu_solve_macs(6)
    assert counter.current_bytes > 0
    fact.release()
    assert counter.current_bytes == 0
    assert counter.peak_bytes == 8 * 36 + 8 * 6


def test_residual_bound_after_direct_solve():
    rng = np.random.default_rng(5)
    for _ in range(10):
        n = int(rng.integers(2, 15))
        dense = rng.standard_normal((n, n)) + n * np.eye(n)
        b = rng.standard_normal(n)
        x = dense_factor_solve(SparseMatrix.from_dense(dense), b)
        bound = 1e-10 * (np.linalg.norm(dense) * np.linalg.norm(x) + np.linalg.norm(b))
        assert np.linalg.norm(dense @ x - b) <= bound


def test_csr_validation_rejects_bad_structure():
    with pytest.raises(ValueError):
        SparseMatrix(2, 2, [0, 1, 2], [1, 0], [1.0, np.nan])
    with pytest.raises(ValueError):
        SparseMatrix(2, 2, [0, 2, 2], [1, 0], [1.0, 1.0])  # unsorted within row
    with pytest.raises(ValueError):
        SparseMatrix(2, 2, [0, 2, 2], [0, 0], [1.0, 1.0])  # duplicate column
    with pytest.raises(ValueError):
        SparseMatrix(2, 2, [0, 1, 1], [2], [1.0])  # column out of range
    with pytest.raises(ValueError):
        SparseMatrix(2, 2, [1, 1, 1], [], [])  # offsets must start at 0
    with pytest.raises(ValueError):
        SparseMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])  # decreasing offsets


def test_csr_allows_empty_rows_and_explicit_zeros():
    a = SparseMatrix(3, 3, [0, 0, 2, 2], [0, 2], [0.0, 5.0])
    assert a.nnz == 2
    assert np.array_equal(a.to_dense(), [[0, 0, 0], [0, 0, 5], [0, 0, 0]])


def test_from_coo_sums_duplicates():
    a = SparseMatrix.from_coo(2, 2, [0, 0, 1], [0, 0, 1], [1.0, 2.0, 4.0])
    assert np.array_equal(a.to_dense(), [[3.0, 0.0], [0.0, 4.0]])


def test_strict_triangle_counts():
    dense = np.array([[1.0, 2.0, 0.0], [3.0, 4.0, 0.0], [5.0, 0.0, 6.0]])
    a = SparseMatrix.from_dense(dense)
    assert a.nnz_strict_lower == 2
    assert a.nnz_strict_upper == 1


def test_with_values_and_submatrix():
    dense = np.arange(9, dtype=float).reshape(3, 3) + np.eye(3)
    a = SparseMatrix.from_dense(dense)
    doubled = a.with_values(a.values * 2)
    assert np.array_equal(doubled.to_dense(), a.to_dense() * 2)
    sub = a.submatrix(np.array([0, 2]), np.array([1, 2]))
    assert np.array_equal(sub.to_dense(), dense[np.ix_([0, 2], [1, 2])])


def test_csr_lincomb_matches_dense():
    rng = np.random.default_rng(9)
    x = rng.random((4, 4)) * (rng.random((4, 4)) < 0.6)
    y = rng.random((4, 4)) * (rng.random((4, 4)) < 0.6)
    a, b = SparseMatrix.from_dense(x), SparseMatrix.from_dense(y)
    counter = CostCounter()
    combo = csr_lincomb(2.0, a, -0.5, b, counter)
    assert np.allclose(combo.to_dense(), 2.0 * x - 0.5 * y, atol=1e-14)
    assert counter.macs == a.nnz + b.nnz


def test_dense_matvec_and_transpose():
    p = np.arange(6, dtype=float).reshape(3, 2)
    counter = CostCounter()
    assert np.array_equal(dense_matvec(p, np.array([1.0, 1.0]), counter), p @ [1.0, 1.0])
    assert np.array_equal(dense_matvec_t(p, np.ones(3), counter), p.T @ np.ones(3))
    assert counter.macs == 12
    with pytest.raises(DimensionError):
        dense_matvec(p, np.ones(3))
    with pytest.raises(DimensionError):
        dense_matvec_t(p, np.ones(2))


def test_matrix_text_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(13)
    dense = rng.standard_normal((7, 5)) * (rng.random((7, 5)) < 0.4)
    a = SparseMatrix.from_dense(dense)
    path = tmp_path / "mat.txt"
    save_matrix_text(a, path)
    b = load_matrix_text(path)
    assert (b.nrows, b.ncols) == (a.nrows, a.ncols)
    assert np.array_equal(a.row_offsets, b.row_offsets)
    assert np.array_equal(a.col_indices, b.col_indices)
    assert np.array_equal(a.values, b.values)
    first = path.read_text().splitlines()[0]
    assert first == f"7 5 {a.nnz}"


def test_matrix_text_rejects_truncated_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2 2\n0 0 1.0\n")
    with pytest.raises(ValueError):
        load_matrix_text(path)


def test_cost_counter_peak_tracking():
    counter = CostCounter()
    counter.alloc(100)
    counter.alloc(50)
    counter.free(100)
    counter.alloc(20)
    assert counter.current_bytes == 70
    assert counter.peak_bytes == 150
    assert counter.peak_megabytes == 150 / 2**20
