"""Instrumented sparse/dense linear algebra primitives.

Every routine that performs floating-point multiply-accumulate work takes a
:class:`CostCounter` and charges it according to the convention below.  The
convention is the single source of truth for the ``macs`` performance
criterion; the independent recount in :mod:`metasolve.recount` reproduces the
same totals from structural quantities alone.

MAC accounting convention
-------------------------
One MAC is one scalar multiply (with or without an accompanying add).  Pure
additions, copies, comparisons and scalar-only recurrences are free.

==============================  =============================================
operation                       charge
==============================  =============================================
sparse matvec ``A @ x``         ``nnz(A)``
dot, norm2, axpy, scale, vmul   ``n`` (vector length)
vector add / subtract           0
CSR linear combination          ``nnz(X) + nnz(Y)``
dense matvec ``P @ x``          ``rows * cols`` (same for ``P.T @ x``)
dense LU factorization          ``n(n-1)(2n-1)/6 + n(n-1)/2``
dense LU solve                  ``n**2``
thin QR of an n-by-m matrix     ``2 n m**2``
triangular sweep solves         charged by the smoother that owns them; see
                                :mod:`metasolve.smoothers`
==============================  =============================================

Mesh assembly, Gaussian random field sampling and file IO are outside the
measured solve path and charge nothing.  Nodal evaluations made while time
stepping (reaction terms, extrapolation combinations) are expressed through
the counted vector primitives, so they are charged at ``n`` per multiply-
bearing operation like any other vector work.

Memory accounting
-----------------
``CostCounter.alloc``/``free`` track bytes of matrices, factorizations and
named solver workspaces owned by a run; ``peak_bytes`` records the high-water
mark.  Transient scratch arrays inside a single primitive are not tracked.
A counter must not be shared by concurrent writers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class SingularMatrixError(ValueError):
    """A factorization met a pivot too small to trust."""


class NumericalError(RuntimeError):
    """A numerical procedure failed in a way retrying will not fix."""


# Pivot tolerance for dense LU: reject when min |U_ii| < RTOL * max |U_ii|.
_PIVOT_RTOL = 1e-14


def lu_factor_macs(n: int) -> int:
    """MAC charge of an in-place dense LU factorization of size ``n``."""
    return n * (n - 1) * (2 * n - 1) // 6 + n * (n - 1) // 2


def lu_solve_macs(n: int) -> int:
    """MAC charge of one forward+backward substitution pair."""
    return n * n


def qr_macs(rows: int, cols: int) -> int:
    """MAC charge of a thin QR factorization (Householder convention)."""
    return 2 * rows * cols * cols


def csr_bytes(nnz: int, nrows: int) -> int:
    """Owned bytes of a CSR matrix: values + column indices + row offsets."""
    return 16 * nnz + 8 * (nrows + 1)


def dense_bytes(rows: int, cols: int) -> int:
    return 8 * rows * cols


def vec_bytes(n: int) -> int:
    return 8 * n


@dataclass
class CostCounter:
    """Accumulates MACs and tracks owned bytes with a peak."""

    macs: int = 0
    current_bytes: int = 0
    peak_bytes: int = 0

    def add_macs(self, count: int) -> None:
        self.macs += int(count)

    def alloc(self, nbytes: int) -> None:
        self.current_bytes += int(nbytes)
        if self.current_bytes > self.peak_bytes:
            self.peak_bytes = self.current_bytes

    def free(self, nbytes: int) -> None:
        self.current_bytes -= int(nbytes)

    @property
    def peak_megabytes(self) -> float:
        return self.peak_bytes / 2**20


def _sink(counter: CostCounter | None) -> CostCounter:
    return counter if counter is not None else CostCounter()


@dataclass(frozen=True)
class SparseMatrix:
    """Immutable CSR matrix with validated structure.

    Invariants: ``row_offsets`` is nondecreasing with ``row_offsets[0] == 0``
    and ``row_offsets[-1] == nnz``; column indices are strictly increasing
    within each row (sorted, duplicate-free); stored values are finite.
    Explicitly stored zeros are allowed.
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "row_offsets", np.asarray(self.row_offsets, dtype=np.int64))
        object.__setattr__(self, "col_indices", np.asarray(self.col_indices, dtype=np.int64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        self._validate()

    def _validate(self) -> None:
        offs, cols, vals = self.row_offsets, self.col_indices, self.values
        if self.nrows < 0 or self.ncols < 0:
            raise DimensionError("negative matrix dimension")
        if offs.ndim != 1 or offs.shape[0] != self.nrows + 1:
            raise DimensionError("row_offsets must have length nrows + 1")
        if cols.shape != vals.shape or cols.ndim != 1:
            raise DimensionError("col_indices and values must be 1-d and equal length")
        if offs[0] != 0 or offs[-1] != cols.shape[0]:
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(offs) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if cols.shape[0]:
            if cols.min() < 0 or cols.max() >= self.ncols:
                raise ValueError("column index out of range")
            starts = np.zeros(cols.shape[0], dtype=bool)
            inner = offs[1:-1]
            starts[inner[inner < cols.shape[0]]] = True
            nonincreasing = (np.diff(cols) <= 0) & ~starts[1:]
            if np.any(nonincreasing):
                raise ValueError("column indices must be strictly increasing within rows")
        if not np.all(np.isfinite(vals)):
            raise ValueError("stored values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @cached_property
    def _scipy(self) -> scipy.sparse.csr_matrix:
        mat = scipy.sparse.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape
        )
        mat.has_sorted_indices = True
        return mat

    @cached_property
    def _row_of_entry(self) -> np.ndarray:
        return np.repeat(np.arange(self.nrows, dtype=np.int64), np.diff(self.row_offsets))

    @cached_property
    def nnz_strict_lower(self) -> int:
        return int(np.count_nonzero(self.col_indices < self._row_of_entry))

    @cached_property
    def nnz_strict_upper(self) -> int:
        return int(np.count_nonzero(self.col_indices > self._row_of_entry))

    @property
    def owned_bytes(self) -> int:
        return csr_bytes(self.nnz, self.nrows)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = scipy.sparse.csr_matrix(mat).copy()
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, arr: np.ndarray) -> "SparseMatrix":
        """Build from a dense array, dropping exact zeros."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError("from_dense expects a 2-d array")
        return cls.from_scipy(scipy.sparse.csr_matrix(arr))

    @classmethod
    def from_coo(cls, nrows: int, ncols: int, rows, cols, vals) -> "SparseMatrix":
        """Build from triplets; duplicate entries are summed."""
        mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
        return cls.from_scipy(mat)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        offs = np.arange(n + 1, dtype=np.int64)
        return cls(n, n, offs, idx, np.ones(n))

    def to_dense(self) -> np.ndarray:
        return self._scipy.toarray()

    def diagonal(self) -> np.ndarray:
        if self.nrows != self.ncols:
            raise DimensionError("diagonal requires a square matrix")
        return self._scipy.diagonal()

    def with_values(self, values: np.ndarray) -> "SparseMatrix":
        """Same sparsity pattern, new stored values."""
        return SparseMatrix(self.nrows, self.ncols, self.row_offsets, self.col_indices, values)

    def submatrix(self, rows: np.ndarray, cols: np.ndarray) -> "SparseMatrix":
        sub = self._scipy[np.ix_(rows, cols)]
        return SparseMatrix.from_scipy(sub)


def spmv(a: SparseMatrix, x: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """``a @ x`` charging one MAC per stored nonzero."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (a.ncols,):
        raise DimensionError(f"spmv: matrix is {a.shape}, vector has shape {x.shape}")
    _sink(counter).add_macs(a.nnz)
    return a._scipy @ x


def dot(x: np.ndarray, y: np.ndarray, counter: CostCounter | None = None) -> float:
    if x.shape != y.shape:
        raise DimensionError("dot: length mismatch")
    _sink(counter).add_macs(x.shape[0])
    return float(np.dot(x, y))


def norm2(x: np.ndarray, counter: CostCounter | None = None) -> float:
    _sink(counter).add_macs(x.shape[0])
    return float(np.linalg.norm(x))


def axpy(alpha: float, x: np.ndarray, y: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """``y += alpha * x`` in place; returns ``y``."""
    if x.shape != y.shape:
        raise DimensionError("axpy: length mismatch")
    _sink(counter).add_macs(x.shape[0])
    y += alpha * x
    return y


def scale(alpha: float, x: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """Returns ``alpha * x`` as a new array."""
    _sink(counter).add_macs(x.shape[0])
    return alpha * x


def vmul(x: np.ndarray, y: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """Elementwise product, one MAC per element."""
    if x.shape != y.shape:
        raise DimensionError("vmul: length mismatch")
    _sink(counter).add_macs(x.shape[0])
    return x * y


def csr_lincomb(
    alpha: float,
    x: SparseMatrix,
    beta: float,
    y: SparseMatrix,
    counter: CostCounter | None = None,
) -> SparseMatrix:
    """``alpha * x + beta * y`` with charge ``nnz(x) + nnz(y)``."""
    if x.shape != y.shape:
        raise DimensionError("csr_lincomb: shape mismatch")
    _sink(counter).add_macs(x.nnz + y.nnz)
    return SparseMatrix.from_scipy(alpha * x._scipy + beta * y._scipy)


def dense_matvec(p: np.ndarray, x: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """``p @ x`` for a dense matrix, charging ``rows * cols``."""
    if p.ndim != 2 or x.shape != (p.shape[1],):
        raise DimensionError(f"dense_matvec: matrix {p.shape} against vector {x.shape}")
    _sink(counter).add_macs(p.shape[0] * p.shape[1])
    return p @ x


def dense_matvec_t(p: np.ndarray, x: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """``p.T @ x`` for a dense matrix, charging ``rows * cols``."""
    if p.ndim != 2 or x.shape != (p.shape[0],):
        raise DimensionError(f"dense_matvec_t: matrix {p.shape} against vector {x.shape}")
    _sink(counter).add_macs(p.shape[0] * p.shape[1])
    return p.T @ x


@dataclass
class LuFactorization:
    """Dense LU of a square operator, reusable across solves.

    Owns ``8 n**2 + 8 n`` bytes while alive; call :meth:`release` to return
    them to the counter that paid for the allocation.
    """

    lu: np.ndarray
    piv: np.ndarray
    _owner: CostCounter | None = field(default=None, repr=False)

    @classmethod
    def from_sparse(cls, a: SparseMatrix, counter: CostCounter | None = None) -> "LuFactorization":
        if a.nrows != a.ncols:
            raise DimensionError("LU factorization requires a square matrix")
        counter = _sink(counter)
        n = a.nrows
        counter.alloc(dense_bytes(n, n) + vec_bytes(n))
        counter.add_macs(lu_factor_macs(n))
        with warnings.catch_warnings():
            # the pivot-ratio check below reports singularity as an exception
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(a.to_dense(), check_finite=False)
        udiag = np.abs(np.diag(lu))
        if n and udiag.min() < _PIVOT_RTOL * max(udiag.max(), 1e-300):
            counter.free(dense_bytes(n, n) + vec_bytes(n))
            raise SingularMatrixError(
                f"pivot ratio {udiag.min():.3e} / {udiag.max():.3e} below tolerance"
            )
        return cls(lu, piv, _owner=counter)

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    def solve(self, b: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
        if b.shape != (self.n,):
            raise DimensionError("LU solve: right-hand side length mismatch")
        _sink(counter).add_macs(lu_solve_macs(self.n))
        return scipy.linalg.lu_solve((self.lu, self.piv), b, check_finite=False)

    def release(self) -> None:
        if self._owner is not None:
            self._owner.free(dense_bytes(self.n, self.n) + vec_bytes(self.n))
            self._owner = None


def dense_factor_solve(a: SparseMatrix, b: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """One-shot direct solve of ``a x = b`` through dense LU."""
    fact = LuFactorization.from_sparse(a, counter)
    try:
        return fact.solve(np.asarray(b, dtype=np.float64), counter)
    finally:
        fact.release()


def save_matrix_text(a: SparseMatrix, path: str | Path) -> None:
    """Write ``rows cols nnz`` then zero-based ``row col value`` triples.

    Triples are emitted in row-major order with ``%.17g`` values, so a
    save/load round trip reproduces the matrix bit for bit.
    """
    path = Path(path)
    lines = [f"{a.nrows} {a.ncols} {a.nnz}"]
    rows = a._row_of_entry
    for r, c, v in zip(rows, a.col_indices, a.values):
        lines.append(f"{r} {c} {v:.17g}")
    path.write_text("\n".join(lines) + "\n")


def load_matrix_text(path: str | Path) -> SparseMatrix:
    """Read the format written by :func:`save_matrix_text`."""
    path = Path(path)
    with path.open() as handle:
        header = handle.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected header 'rows cols nnz'")
        nrows, ncols, nnz = (int(tok) for tok in header)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        count = 0
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if count >= nnz:
                raise ValueError(f"{path}: more triples than the header promised")
            r, c, v = line.split()
            rows[count] = int(r)
            cols[count] = int(c)
            vals[count] = float(v)
            count += 1
    if count != nnz:
        raise ValueError(f"{path}: header promised {nnz} triples, found {count}")
    return SparseMatrix.from_coo(nrows, ncols, rows, cols, vals)
