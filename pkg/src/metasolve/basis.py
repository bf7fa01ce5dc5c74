"""Coarse-space prolongation bases for hybrid preconditioners.

A basis is a dense full-column-rank matrix P mapping coarse coefficients to
fine interior nodal values.  Three constructions are provided: bilinear
interpolation from a nested coarser lattice, an orthonormalized block of
smoothed random vectors, and loading from a matrix text file.  Rank
validation (smallest singular value above 1e-10) runs on every construction
path and is an uncharged diagnostic; construction itself charges the QR and
smoothing work listed in :mod:`metasolve.linalg`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import (
    CostCounter,
    DimensionError,
    SparseMatrix,
    _sink,
    dense_bytes,
    dense_matvec,
    dense_matvec_t,
    load_matrix_text,
    qr_macs,
    save_matrix_text,
)
from .mesh import StructuredMesh

_RANK_TOL = 1e-10
JACOBI_SMOOTH_DAMPING = 2.0 / 3.0


class RankDeficientError(ValueError):
    """A basis failed the smallest-singular-value check."""


@dataclass
class ProlongationBasis:
    """Dense prolongation P with provenance. Columns span the coarse space."""

    matrix: np.ndarray
    kind: str
    source: str

    def __post_init__(self) -> None:
        self.matrix = np.asfortranarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DimensionError("basis matrix must be 2-d")
        n, m = self.matrix.shape
        if m < 1 or n < m:
            raise DimensionError(f"basis cannot be wide: got {n} fine by {m} coarse")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("basis entries must be finite")
        smin = np.linalg.svd(self.matrix, compute_uv=False)[-1]
        if smin <= _RANK_TOL:
            raise RankDeficientError(f"smallest singular value {smin:.3e} <= {_RANK_TOL}")

    @property
    def n_fine(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_coarse(self) -> int:
        return self.matrix.shape[1]

    @property
    def owned_bytes(self) -> int:
        return dense_bytes(*self.matrix.shape)

    def apply(self, coarse: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
        """Prolong coarse coefficients to the fine space: ``P @ coarse``."""
        return dense_matvec(self.matrix, coarse, counter)

    def apply_t(self, fine: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
        """Restrict a fine vector to the coarse space: ``P.T @ fine``."""
        return dense_matvec_t(self.matrix, fine, counter)


def smallest_prime_factor(n: int) -> int:
    if n < 2:
        raise ValueError("no prime factor below 2")
    p = 2
    while p * p <= n:
        if n % p == 0:
            return p
        p += 1
    return n


def coarsen_chain(fine_n: int, levels: int) -> list[int]:
    """Nested lattice sizes for a level hierarchy.

    Each coarsening divides the interval count by its smallest prime factor,
    which keeps every coarse lattice nested in the finer one.  Fails when a
    level would lose its interior (fewer than 3 nodes per side).
    """
    if levels < 1:
        raise ValueError("levels must be at least 1")
    chain = [fine_n]
    for _ in range(levels - 1):
        intervals = chain[-1] - 1
        if intervals < 2:
            raise ValueError(f"cannot coarsen a lattice with {chain[-1]} nodes per side")
        coarser = intervals // smallest_prime_factor(intervals) + 1
        if coarser < 3:
            raise ValueError(
                f"coarsening {chain[-1]} nodes per side leaves no interior ({coarser} per side)"
            )
        chain.append(coarser)
    return chain


def bilinear_weights(fine_n: int, coarse_n: int) -> np.ndarray:
    """Full-lattice bilinear interpolation weights, all nodes included.

    Entry (i, I) is the coarse hat function of node I evaluated at fine node
    i; each row sums to one (partition of unity).  Requires the coarse
    lattice to nest: ``(fine_n - 1)`` divisible by ``(coarse_n - 1)``.
    """
    if coarse_n < 2 or fine_n < 2:
        raise ValueError("lattices need at least 2 nodes per side")
    if fine_n <= coarse_n:
        raise ValueError("coarse lattice must be strictly smaller")
    if (fine_n - 1) % (coarse_n - 1) != 0:
        raise ValueError(f"{fine_n - 1} intervals do not nest over {coarse_n - 1}")
    fine_x = np.linspace(0.0, 1.0, fine_n)
    coarse_x = np.linspace(0.0, 1.0, coarse_n)
    spacing = 1.0 / (coarse_n - 1)
    one_d = np.maximum(0.0, 1.0 - np.abs(fine_x[:, None] - coarse_x[None, :]) / spacing)
    return np.kron(one_d, one_d)


def lattice_geometric_basis(fine_n: int, coarse_n: int) -> ProlongationBasis:
    """Bilinear prolongation between the interiors of two nested lattices."""
    if coarse_n < 3:
        raise ValueError("coarse lattice needs an interior (at least 3 nodes per side)")
    full = bilinear_weights(fine_n, coarse_n)
    fine_interior = np.flatnonzero(~_lattice_boundary_mask(fine_n))
    coarse_interior = np.flatnonzero(~_lattice_boundary_mask(coarse_n))
    p = full[np.ix_(fine_interior, coarse_interior)]
    return ProlongationBasis(p, kind="geometric", source=f"bilinear {fine_n}->{coarse_n}")


def geometric_basis(mesh: StructuredMesh, coarse_n: int) -> ProlongationBasis:
    """Bilinear prolongation from a mesh interior to a nested coarse lattice."""
    return lattice_geometric_basis(mesh.n, coarse_n)


def _lattice_boundary_mask(n: int) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask.ravel()


def orthonormalize(basis: ProlongationBasis, counter: CostCounter | None = None) -> ProlongationBasis:
    """Replace the basis with an orthonormal span via thin QR."""
    counter = _sink(counter)
    counter.add_macs(qr_macs(basis.n_fine, basis.n_coarse))
    q, _ = np.linalg.qr(basis.matrix)
    return ProlongationBasis(q, kind=basis.kind, source=basis.source + "+qr")


def random_smoothed_qr_basis(
    a: SparseMatrix,
    n_coarse: int,
    smoothing_sweeps: int,
    seed: int,
    counter: CostCounter | None = None,
) -> ProlongationBasis:
    """Orthonormal basis of damped-Jacobi-smoothed Gaussian random vectors.

    Each sweep applies ``X <- X - (2/3) D^-1 A X`` columnwise, biasing the
    block toward the low end of A's spectrum; thin QR then orthonormalizes.
    Deterministic for a fixed seed.  If smoothing collapses the rank the
    draw is retried once with ``seed + 1``.
    """
    counter = _sink(counter)
    if a.nrows != a.ncols:
        raise DimensionError("smoothing operator must be square")
    n = a.nrows
    if not 1 <= n_coarse < n:
        raise DimensionError(f"need 1 <= n_coarse < {n}, got {n_coarse}")
    if smoothing_sweeps < 0:
        raise ValueError("smoothing_sweeps must be nonnegative")
    diag = a.diagonal()
    if np.any(diag == 0.0):
        raise ValueError("smoothing requires a nonzero diagonal")
    inv_diag = 1.0 / diag

    last_error: RankDeficientError | None = None
    for attempt_seed in (seed, seed + 1):
        rng = np.random.default_rng(attempt_seed)
        block = rng.standard_normal((n, n_coarse))
        for _ in range(smoothing_sweeps):
            smoothed = a._scipy @ block
            counter.add_macs(n_coarse * a.nnz)
            smoothed *= inv_diag[:, None]
            counter.add_macs(n_coarse * n)
            block -= JACOBI_SMOOTH_DAMPING * smoothed
            counter.add_macs(n_coarse * n)
        counter.add_macs(qr_macs(n, n_coarse))
        q, _ = np.linalg.qr(block)
        try:
            return ProlongationBasis(
                q,
                kind="random_qr",
                source=f"random_qr sweeps={smoothing_sweeps} seed={attempt_seed}",
            )
        except RankDeficientError as exc:
            last_error = exc
    raise RankDeficientError(f"random basis rank-deficient after retry: {last_error}")


def load_basis(path: str | Path, expected_rows: int | None = None) -> ProlongationBasis:
    """Read a prolongation from matrix text format, validating rank."""
    mat = load_matrix_text(path)
    if expected_rows is not None and mat.nrows != expected_rows:
        raise DimensionError(f"{path}: basis has {mat.nrows} rows, expected {expected_rows}")
    return ProlongationBasis(mat.to_dense(), kind="file", source=str(path))


def save_basis(basis: ProlongationBasis, path: str | Path) -> None:
    save_matrix_text(SparseMatrix.from_dense(basis.matrix), path)
