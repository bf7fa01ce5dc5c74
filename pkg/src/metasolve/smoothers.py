"""Stationary relaxation sweeps and Chebyshev semi-iteration.

Each relaxation kind applies ``x <- x + M^-1 (b - A x)`` with the classical
splitting matrix M built from A's diagonal D, strict lower triangle L and
strict upper triangle U:

==============  ====================================  =======================
kind            M                                     MACs per sweep
==============  ====================================  =======================
jacobi          D                                     ``nnz + n``
gauss_seidel    D + L                                 ``nnz + nnz_L + n``
sor             D/omega + L                           ``nnz + nnz_L + 2n``
ssor            (D + omega L) D^-1 (D + omega U)      ``nnz + nnz_L + nnz_U
                / (omega (2 - omega))                 + 6n``
==============  ====================================  =======================

The Chebyshev iteration charges ``nnz`` once for the initial residual plus a
uniform ``nnz + 6n`` per step, and one extra ``nnz`` for each residual
resynchronization (every 50 steps).  Spectrum estimation charges
``2n + 30 (nnz + 2n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import backward_substitute, forward_substitute
from .linalg import CostCounter, DimensionError, NumericalError, SparseMatrix, _sink, norm2, scale, spmv, vmul

RELAXATION_KINDS = ("jacobi", "gauss_seidel", "sor", "ssor")
DEFAULT_OMEGA = 1.5
CHEB_RESYNC_PERIOD = 50
SPECTRUM_ITERATIONS = 30
SPECTRUM_SAFETY = 1.05
DEFAULT_SPECTRUM_RATIO = 30.0


def sweep_macs(kind: str, nnz: int, nnz_lower: int, nnz_upper: int, n: int) -> int:
    """Per-sweep MAC charge for a relaxation kind (table in module docstring)."""
    if kind == "jacobi":
        return nnz + n
    if kind == "gauss_seidel":
        return nnz + nnz_lower + n
    if kind == "sor":
        return nnz + nnz_lower + 2 * n
    if kind == "ssor":
        return nnz + nnz_lower + nnz_upper + 6 * n
    raise ValueError(f"unknown relaxation kind {kind!r}")


def chebyshev_macs(nnz: int, n: int, steps: int) -> int:
    if steps <= 0:
        return 0
    resyncs = sum(1 for i in range(1, steps) if i % CHEB_RESYNC_PERIOD == 0)
    return nnz + steps * (nnz + 6 * n) + resyncs * nnz


def spectrum_macs(nnz: int, n: int) -> int:
    return 2 * n + SPECTRUM_ITERATIONS * (nnz + 2 * n)


@dataclass
class PreparedRelaxation:
    """A relaxation kind bound to one operator, reusable across sweeps."""

    kind: str
    a: SparseMatrix
    omega: float
    inv_diag: np.ndarray
    diag: np.ndarray
    macs_per_sweep: int

    @property
    def n(self) -> int:
        return self.a.nrows


def prepare_relaxation(kind: str, a: SparseMatrix, omega: float = DEFAULT_OMEGA) -> PreparedRelaxation:
    if kind not in RELAXATION_KINDS:
        raise ValueError(f"unknown relaxation kind {kind!r}")
    if a.nrows != a.ncols:
        raise DimensionError("relaxation requires a square operator")
    if kind in ("sor", "ssor") and not 0.0 < omega < 2.0:
        raise ValueError("sor/ssor require 0 < omega < 2")
    diag = a.diagonal()
    if np.any(diag == 0.0):
        raise ValueError("relaxation requires a nonzero diagonal")
    return PreparedRelaxation(
        kind=kind,
        a=a,
        omega=omega,
        inv_diag=1.0 / diag,
        diag=diag,
        macs_per_sweep=sweep_macs(kind, a.nnz, a.nnz_strict_lower, a.nnz_strict_upper, a.nrows),
    )


def run_sweeps(
    prep: PreparedRelaxation,
    b: np.ndarray,
    x: np.ndarray,
    sweeps: int,
    counter: CostCounter | None = None,
) -> np.ndarray:
    """Apply ``sweeps`` relaxation updates starting from ``x`` (not mutated)."""
    counter = _sink(counter)
    a = prep.a
    if b.shape != (a.nrows,) or x.shape != (a.nrows,):
        raise DimensionError("relaxation operand length mismatch")
    x = x.copy()
    offs, cols, vals = a.row_offsets, a.col_indices, a.values
    for _ in range(sweeps):
        r = b - spmv(a, x, counter)
        if prep.kind == "jacobi":
            z = vmul(r, prep.inv_diag, counter)
        elif prep.kind == "gauss_seidel":
            z = forward_substitute(offs, cols, vals, r, 1.0, 1.0)
            counter.add_macs(a.nnz_strict_lower + a.nrows)
        elif prep.kind == "sor":
            z = forward_substitute(offs, cols, vals, r, 1.0 / prep.omega, 1.0)
            counter.add_macs(a.nnz_strict_lower + 2 * a.nrows)
        else:  # ssor
            half = forward_substitute(offs, cols, vals, r, 1.0, prep.omega)
            counter.add_macs(a.nnz_strict_lower + 2 * a.nrows)
            mid = vmul(half, prep.diag, counter)
            back = backward_substitute(offs, cols, vals, mid, 1.0, prep.omega)
            counter.add_macs(a.nnz_strict_upper + 2 * a.nrows)
            z = scale(prep.omega * (2.0 - prep.omega), back, counter)
        x += z
    return x


def relax_sweeps(
    kind: str,
    a: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray,
    sweeps: int,
    counter: CostCounter | None = None,
    omega: float = DEFAULT_OMEGA,
) -> np.ndarray:
    """Convenience wrapper: prepare once, then run ``sweeps`` updates."""
    return run_sweeps(prepare_relaxation(kind, a, omega), b, x0, sweeps, counter)


def chebyshev_iterate(
    a: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray,
    lam_min: float,
    lam_max: float,
    n_steps: int,
    counter: CostCounter | None = None,
) -> np.ndarray:
    """Chebyshev semi-iteration for SPD A with spectrum inside [lam_min, lam_max].

    Runs the three-term recurrence

        x^{i+1} = -(r^i + a x^i + beta_{i-1} x^{i-1}) / gamma_i
        r^{i+1} = (A r^i - a r^i - beta_{i-1} r^{i-1}) / gamma_i

    with ``a = (lam_max + lam_min) / 2``, ``c = (lam_max - lam_min) / 2``,
    ``gamma_0 = -a``, ``beta_0 = (c/2)(1/eta)`` for ``eta = -a/c``, and
    thereafter ``beta_i = (c/2)^2 / gamma_i``, ``gamma_i = -(a + beta_{i-1})``.
    The updates keep the recurrence residual equal to ``p_i(A) r^0`` for the
    scaled-and-shifted Chebyshev polynomial ``p_i`` with ``p_i(0) = 1``; the
    residual is recomputed from scratch every 50 steps to cap drift.
    """
    counter = _sink(counter)
    if a.nrows != a.ncols:
        raise DimensionError("chebyshev requires a square operator")
    if b.shape != (a.nrows,) or x0.shape != (a.nrows,):
        raise DimensionError("chebyshev operand length mismatch")
    if not 0.0 < lam_min < lam_max:
        raise ValueError("chebyshev requires 0 < lam_min < lam_max")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    x = x0.copy()
    if n_steps == 0:
        return x

    n = a.nrows
    center = (lam_max + lam_min) / 2.0
    half_width = (lam_max - lam_min) / 2.0
    eta = -center / half_width
    r = b - spmv(a, x, counter)
    x_prev = np.zeros(n)
    r_prev = np.zeros(n)
    beta_prev = 0.0
    gamma = -center
    for i in range(n_steps):
        if i > 0 and i % CHEB_RESYNC_PERIOD == 0:
            r = b - spmv(a, x, counter)
        x_new = -(r + center * x + beta_prev * x_prev) / gamma
        counter.add_macs(3 * n)
        ar = spmv(a, r, counter)
        r_new = (ar - center * r - beta_prev * r_prev) / gamma
        counter.add_macs(3 * n)
        x_prev, x = x, x_new
        r_prev, r = r, r_new
        if i == 0:
            beta_prev = (half_width / 2.0) * (1.0 / eta)
        else:
            beta_prev = (half_width / 2.0) ** 2 / gamma
        gamma = -(center + beta_prev)
    return x


@dataclass(frozen=True)
class SpectrumEstimate:
    lam_min: float
    lam_max: float


def estimate_spectrum(
    a: SparseMatrix,
    counter: CostCounter | None = None,
    seed: int = 0,
    ratio: float = DEFAULT_SPECTRUM_RATIO,
) -> SpectrumEstimate:
    """Bound the spectrum of SPD ``a`` by power iteration.

    Thirty power steps estimate the largest eigenvalue, inflated by 5% for
    safety; the smallest is taken as ``lam_max / ratio``.  Deterministic for
    a fixed seed.
    """
    counter = _sink(counter)
    if a.nrows != a.ncols:
        raise DimensionError("spectrum estimation requires a square operator")
    if ratio <= 1.0:
        raise ValueError("spectrum ratio must exceed 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.nrows)
    nv = norm2(v, counter)
    v = scale(1.0 / nv, v, counter)
    growth = 0.0
    for _ in range(SPECTRUM_ITERATIONS):
        w = spmv(a, v, counter)
        growth = norm2(w, counter)
        if growth == 0.0:
            raise NumericalError("power iteration collapsed: operator annihilates the iterate")
        v = scale(1.0 / growth, w, counter)
    lam_max = SPECTRUM_SAFETY * growth
    return SpectrumEstimate(lam_min=lam_max / ratio, lam_max=lam_max)
