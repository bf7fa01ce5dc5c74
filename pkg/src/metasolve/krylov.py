"""Preconditioned Krylov solvers: CG, flexible GMRES, BiCGStab.

All three stop on ``||r|| / ||b|| <= tol``, count outer iterations, and
charge every floating-point operation through the counted primitives, so a
structural replay of the iteration counts reproduces the MAC totals exactly.
The preconditioner is any object with ``apply(r, counter) -> z``; ``None``
runs the unpreconditioned iteration.  Reported residuals are the solver's
own estimates (recurrence values, Givens sines); callers guard against
recurrence drift by recomputing from the returned iterate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    CostCounter,
    DimensionError,
    SparseMatrix,
    _sink,
    axpy,
    dense_bytes,
    dot,
    norm2,
    scale,
    spmv,
    vec_bytes,
)


@dataclass
class SolveReport:
    """Outcome and cost of one linear solve.

    ``residual_history`` has ``iterations + 1`` entries (initial plus one per
    completed iteration); ``macs`` is the counter delta across this call and
    ``peak_bytes`` the counter's high-water mark when the call returned.
    ``half_final`` marks a BiCGStab run that stopped at the half step;
    ``cycle_sizes`` records FGMRES Arnoldi cycle lengths.
    """

    iterations: int
    converged: bool
    final_relative_residual: float
    residual_history: list[float]
    macs: int
    wall_seconds: float
    peak_bytes: int
    breakdown: str | None = None
    half_final: bool = False
    nonsymmetric_pc: bool = False
    cycle_sizes: list[int] = field(default_factory=list)


class _Identity:
    def apply(self, r: np.ndarray, counter: CostCounter) -> np.ndarray:
        return r


def _pc_or_identity(pc):
    return pc if pc is not None else _Identity()


def _pc_nonsymmetric(pc) -> bool:
    return pc is not None and getattr(pc, "is_symmetric", True) is False


def _validate(a: SparseMatrix, b: np.ndarray, x0: np.ndarray, tol: float, maxit: int) -> None:
    if a.nrows != a.ncols:
        raise DimensionError("solver requires a square operator")
    if b.shape != (a.nrows,) or x0.shape != (a.nrows,):
        raise DimensionError("right-hand side / initial guess length mismatch")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if maxit < 1:
        raise ValueError("maxit must be at least 1")


def cg(
    a: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    pc=None,
    tol: float = 1e-12,
    maxit: int = 100000,
    counter: CostCounter | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients for SPD systems.

    Breakdown of the search-direction curvature (``p^T A p <= 0``) reports
    nonconvergence with an ``indefinite`` flag.  A structurally nonsymmetric
    preconditioner is flagged in the report, not rejected.
    """
    counter = _sink(counter)
    x0 = np.zeros(a.nrows) if x0 is None else np.asarray(x0, dtype=np.float64)
    _validate(a, b, x0, tol, maxit)
    start = time.perf_counter()
    macs_before = counter.macs
    workspace = 4 * vec_bytes(a.nrows)
    counter.alloc(workspace)
    nonsym = _pc_nonsymmetric(pc)
    apply_pc = _pc_or_identity(pc).apply

    def finish(x, iterations, converged, history, breakdown=None):
        counter.free(workspace)
        return x, SolveReport(
            iterations=iterations,
            converged=converged,
            final_relative_residual=history[-1],
            residual_history=history,
            macs=counter.macs - macs_before,
            wall_seconds=time.perf_counter() - start,
            peak_bytes=counter.peak_bytes,
            breakdown=breakdown,
            nonsymmetric_pc=nonsym,
        )

    bnorm = norm2(b, counter)
    if bnorm == 0.0:
        return finish(np.zeros(a.nrows), 0, True, [0.0])
    x = x0.copy()
    r = b - spmv(a, x, counter)
    res = norm2(r, counter)
    history = [res / bnorm]
    if history[-1] <= tol:
        return finish(x, 0, True, history)

    z = apply_pc(r, counter)
    p = z.copy()
    rz = dot(r, z, counter)
    iteration = 0
    while iteration < maxit:
        iteration += 1
        q = spmv(a, p, counter)
        curvature = dot(p, q, counter)
        if curvature <= 0.0:
            return finish(x, iteration - 1, False, history, breakdown="indefinite")
        alpha = rz / curvature
        axpy(alpha, p, x, counter)
        axpy(-alpha, q, r, counter)
        res = norm2(r, counter)
        history.append(res / bnorm)
        if history[-1] <= tol:
            return finish(x, iteration, True, history)
        z = apply_pc(r, counter)
        rz_next = dot(r, z, counter)
        beta = rz_next / rz
        rz = rz_next
        p = z + scale(beta, p, counter)
    return finish(x, maxit, False, history)


def fgmres(
    a: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    pc=None,
    restart: int = 50,
    tol: float = 1e-12,
    maxit: int = 100000,
    counter: CostCounter | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Right-preconditioned flexible GMRES with modified Gram-Schmidt.

    The preconditioned directions are stored per cycle, so the
    preconditioner may vary between iterations.  A non-finite Givens
    rotation (least-squares breakdown) forces one restart; a second failure
    reports nonconvergence.
    """
    counter = _sink(counter)
    x0 = np.zeros(a.nrows) if x0 is None else np.asarray(x0, dtype=np.float64)
    _validate(a, b, x0, tol, maxit)
    if restart < 1:
        raise ValueError("restart must be at least 1")
    start = time.perf_counter()
    macs_before = counter.macs
    n = a.nrows
    workspace = (2 * restart + 3) * vec_bytes(n) + dense_bytes(restart + 1, restart)
    counter.alloc(workspace)
    apply_pc = _pc_or_identity(pc).apply
    cycle_sizes: list[int] = []

    def finish(x, iterations, converged, history, breakdown=None):
        counter.free(workspace)
        return x, SolveReport(
            iterations=iterations,
            converged=converged,
            final_relative_residual=history[-1],
            residual_history=history,
            macs=counter.macs - macs_before,
            wall_seconds=time.perf_counter() - start,
            peak_bytes=counter.peak_bytes,
            breakdown=breakdown,
            cycle_sizes=cycle_sizes,
        )

    bnorm = norm2(b, counter)
    if bnorm == 0.0:
        return finish(np.zeros(n), 0, True, [0.0])
    x = x0.copy()
    history: list[float] = []
    total = 0
    converged = False
    ls_failures = 0
    first_cycle = True
    while True:
        r = b - spmv(a, x, counter)
        beta = norm2(r, counter)
        if first_cycle:
            history.append(beta / bnorm)
            if history[-1] <= tol:
                return finish(x, 0, True, history)
            first_cycle = False
        basis = [scale(1.0 / beta, r, counter)]
        directions: list[np.ndarray] = []
        hess = np.zeros((restart + 1, restart))
        g = np.zeros(restart + 1)
        g[0] = beta
        cos_r = np.zeros(restart)
        sin_r = np.zeros(restart)
        j = 0
        ls_broke = False
        while j < restart and total < maxit and not converged:
            z = apply_pc(basis[j], counter)
            directions.append(z)
            w = spmv(a, z, counter)
            for i in range(j + 1):
                hij = dot(w, basis[i], counter)
                hess[i, j] = hij
                axpy(-hij, basis[i], w, counter)
            hj1 = norm2(w, counter)
            hess[j + 1, j] = hj1
            # previously accumulated rotations, then one new rotation
            for i in range(j):
                hi, hi1 = hess[i, j], hess[i + 1, j]
                hess[i, j] = cos_r[i] * hi + sin_r[i] * hi1
                hess[i + 1, j] = -sin_r[i] * hi + cos_r[i] * hi1
            denom = float(np.hypot(hess[j, j], hess[j + 1, j]))
            if denom == 0.0 or not np.isfinite(denom):
                ls_broke = True
                break
            cos_r[j] = hess[j, j] / denom
            sin_r[j] = hess[j + 1, j] / denom
            hess[j, j] = denom
            hess[j + 1, j] = 0.0
            g[j + 1] = -sin_r[j] * g[j]
            g[j] = cos_r[j] * g[j]
            total += 1
            j += 1
            history.append(abs(g[j]) / bnorm)
            # always normalize and append, so every iteration carries the
            # same charge; hj1 == 0 means an exact invariant subspace and
            # the estimate above is already zero
            factor = 1.0 if hj1 == 0.0 else 1.0 / hj1
            basis.append(scale(factor, w, counter))
            if history[-1] <= tol:
                converged = True
                break
        cycle_sizes.append(j)
        if j > 0:
            # back substitution on the j-by-j triangle, then basis update
            y = np.zeros(j)
            for i in range(j - 1, -1, -1):
                y[i] = (g[i] - hess[i, i + 1 : j] @ y[i + 1 : j]) / hess[i, i]
            counter.add_macs(j * (j + 1) // 2)
            for i in range(j):
                axpy(y[i], directions[i], x, counter)
        if converged:
            return finish(x, total, True, history)
        if ls_broke:
            ls_failures += 1
            if ls_failures > 1:
                return finish(x, total, False, history, breakdown="least_squares")
            continue
        if total >= maxit:
            return finish(x, total, False, history)


def bicgstab(
    a: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    pc=None,
    tol: float = 1e-12,
    maxit: int = 100000,
    counter: CostCounter | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned BiCGStab: two matvecs and two preconditioner
    applications per full iteration, both counted.

    Convergence at the half step (after the ``s`` residual) updates the
    iterate with the partial correction and marks the report accordingly.
    Exact zero denominators report ``rho``/``alpha``/``omega`` breakdowns.
    """
    counter = _sink(counter)
    x0 = np.zeros(a.nrows) if x0 is None else np.asarray(x0, dtype=np.float64)
    _validate(a, b, x0, tol, maxit)
    start = time.perf_counter()
    macs_before = counter.macs
    workspace = 8 * vec_bytes(a.nrows)
    counter.alloc(workspace)
    apply_pc = _pc_or_identity(pc).apply

    def finish(x, iterations, converged, history, breakdown=None, half_final=False):
        counter.free(workspace)
        return x, SolveReport(
            iterations=iterations,
            converged=converged,
            final_relative_residual=history[-1],
            residual_history=history,
            macs=counter.macs - macs_before,
            wall_seconds=time.perf_counter() - start,
            peak_bytes=counter.peak_bytes,
            breakdown=breakdown,
            half_final=half_final,
        )

    bnorm = norm2(b, counter)
    if bnorm == 0.0:
        return finish(np.zeros(a.nrows), 0, True, [0.0])
    x = x0.copy()
    r = b - spmv(a, x, counter)
    res = norm2(r, counter)
    history = [res / bnorm]
    if history[-1] <= tol:
        return finish(x, 0, True, history)

    r_shadow = r.copy()
    rho_prev = 1.0
    omega = 1.0
    alpha = 1.0
    v = np.zeros(a.nrows)
    p = np.zeros(a.nrows)
    iteration = 0
    while iteration < maxit:
        iteration += 1
        rho = dot(r_shadow, r, counter)
        if rho == 0.0:
            return finish(x, iteration - 1, False, history, breakdown="rho")
        if iteration == 1:
            p = r.copy()
        else:
            beta = (rho / rho_prev) * (alpha / omega)
            axpy(-omega, v, p, counter)
            p = r + scale(beta, p, counter)
        p_hat = apply_pc(p, counter)
        v = spmv(a, p_hat, counter)
        denom = dot(r_shadow, v, counter)
        if denom == 0.0:
            return finish(x, iteration - 1, False, history, breakdown="alpha")
        alpha = rho / denom
        s = r.copy()
        axpy(-alpha, v, s, counter)
        s_res = norm2(s, counter)
        if s_res / bnorm <= tol:
            axpy(alpha, p_hat, x, counter)
            history.append(s_res / bnorm)
            return finish(x, iteration, True, history, half_final=True)
        s_hat = apply_pc(s, counter)
        t = spmv(a, s_hat, counter)
        tt = dot(t, t, counter)
        if tt == 0.0:
            return finish(x, iteration - 1, False, history, breakdown="omega")
        omega = dot(t, s, counter) / tt
        axpy(alpha, p_hat, x, counter)
        axpy(omega, s_hat, x, counter)
        r = s
        axpy(-omega, t, r, counter)
        res = norm2(r, counter)
        history.append(res / bnorm)
        if history[-1] <= tol:
            return finish(x, iteration, True, history)
        rho_prev = rho
    return finish(x, maxit, False, history)
