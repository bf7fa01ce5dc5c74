"""Time integration for reaction-diffusion runs: IMEX and Newton loops.

Semi-discrete form on interior unknowns U (boundary values pinned to 0):

    M U' = -A U + [M G(u)]_interior,   G(u) = R(u) + f,   R(u) = u - u**2

with the nonlinear term evaluated nodally and weighted by the interior-row
mass block.  Two marching families share this right-hand side:

* ``imex_run`` treats diffusion implicitly with a theta weighting and the
  nodal term explicitly through an Adams-Bashforth ramp (first order at step
  0, second at step 1, third from step 2 on).  The system matrix
  ``S = M + theta*dt*A`` is fixed, so the preconditioner is built once.
* ``newton_run`` solves the full theta-scheme residual per step with damped-
  free Newton iterations; the Jacobian and its preconditioner are refreshed
  every iteration (the prolongation bases are reused).

MAC charges per time step, for the replay in ``recount``:

* nodal term: one ``vmul`` (n_full) when the reaction is on, nothing
  otherwise; the Adams-Bashforth combination adds 0 / n_full / 2*n_full
  (steps 0 / 1 / >=2) via its difference form.
* IMEX right-hand side: ``spmv(m_ii)`` + ``spmv(m_if)`` + one axpy, plus
  ``spmv(a_ii)`` + one axpy when theta < 1.
* Newton constant part: ``spmv(m_ii)`` plus ``spmv(a_ii)``, the nodal term
  and ``spmv(m_if)`` with two axpy when theta < 1, then one norm for the
  convergence floor scale.
* Newton residual evaluation: ``spmv(m_ii)`` + ``spmv(a_ii)`` +
  ``spmv(m_if)`` + two axpy + one norm; a step taking k iterations
  evaluates it k+1 times.  Refreshing the Jacobian
  ``S - theta*dt*M*diag(1 - 2u)`` (the exact derivative of the nodal
  reaction term) charges nnz(M) + 2n: two scalings of the state and one
  pass over the mass entries, with the subtraction free.  The Jacobian
  value buffer is allocated once per run.  Each accepted update is one
  axpy.

Setup (matrix combination, basis construction, preconditioner assembly) is
timed and counted separately from the stepping loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .config import MetaSolverConfig, SolverOptions
from .krylov import SolveReport, bicgstab, cg, fgmres
from .linalg import (
    CostCounter,
    LuFactorization,
    SparseMatrix,
    _sink,
    axpy,
    csr_lincomb,
    norm2,
    spmv,
    vmul,
)
from .mesh import AssembledSystem, GrfSpec, ScalarField, StructuredMesh, assemble, build_mesh, grf_sample
from .precond import build_bases, build_hybrid

_EPS = float(np.finfo(np.float64).eps)
_NEWTON_FLOOR_ULPS = 100.0


class SolverDivergedError(RuntimeError):
    """A linear or Newton solve failed to converge at some time step."""

    def __init__(self, scheme: str, step: int, message: str, residuals: list[float] | None = None):
        super().__init__(f"{scheme} run failed at step {step}: {message}")
        self.scheme = scheme
        self.step = step
        self.residuals = residuals or []


@dataclass(frozen=True)
class RdProblem:
    """One reaction-diffusion run: fields, horizon, and scheme knobs.

    ``f_time`` optionally supplies time-dependent nodal forcing (full node
    vector per time); when absent the static ``f_field`` is used throughout.
    ``theta`` is the implicit weight: 1.0 backward Euler, 0.5 midpoint.
    """

    mesh: StructuredMesh
    k_field: ScalarField
    f_field: ScalarField
    u0: ScalarField
    t_end: float = 1.0
    dt: float = 1.0 / 30.0
    theta: float = 1.0
    with_reaction: bool = True
    f_time: Callable[[float], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        steps = round(self.t_end / self.dt)
        if steps < 1 or abs(steps * self.dt - self.t_end) > 1e-9 * max(1.0, abs(self.t_end)):
            raise ValueError("t_end must be a positive multiple of dt")
        for f in (self.k_field, self.f_field, self.u0):
            if f.values.shape != (self.mesh.n_nodes,):
                raise ValueError("field does not match the mesh")

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt)


def benchmark_problem(
    n: int = 31,
    seed: int = 0,
    theta: float = 1.0,
    dt: float | None = None,
    t_end: float = 1.0,
    with_reaction: bool = True,
) -> RdProblem:
    """The default Fisher run: unit square, h = 1/(n-1) = dt, zero start.

    Diffusion k is a floored Gaussian field (mean 1.0, scale 0.3, length 0.1,
    floor 0.1); forcing is an unfloored draw (mean 0.0, scale 1.0, length
    0.1) from an offset seed so the two fields are independent.
    """
    mesh = build_mesh(n)
    k_field = grf_sample(GrfSpec(1.0, 0.3, 0.1, 0.1, seed), mesh)
    f_field = grf_sample(GrfSpec(0.0, 1.0, 0.1, None, seed + 10_000), mesh)
    u0 = ScalarField.constant(mesh, 0.0)
    return RdProblem(
        mesh=mesh,
        k_field=k_field,
        f_field=f_field,
        u0=u0,
        t_end=t_end,
        dt=mesh.h if dt is None else dt,
        theta=theta,
        with_reaction=with_reaction,
    )


class Ab3State:
    """Sliding window of the last three nodal-term evaluations."""

    def __init__(self) -> None:
        self.history: list[np.ndarray] = []

    def push(self, g: np.ndarray) -> None:
        self.history.append(g)
        if len(self.history) > 3:
            self.history.pop(0)


def ab3_combine(state: Ab3State, n: int, counter: CostCounter | None = None) -> np.ndarray:
    """Adams-Bashforth ramp: G(u0); 1.5 G(u1) - 0.5 G(u0); then the
    (23, -16, 5)/12 stencil.

    Computed in difference form (latest value plus scaled differences), so a
    constant history is reproduced bitwise and the effective coefficients sum
    to one exactly.  Charges one axpy per difference: 0 / n / 2n macs.
    """
    counter = _sink(counter)
    if n < 0:
        raise ValueError("step index must be nonnegative")
    need = min(n + 1, 3)
    if len(state.history) < need:
        raise ValueError(f"step {n} needs {need} stored evaluations, have {len(state.history)}")
    if n == 0:
        return state.history[-1].copy()
    if n == 1:
        g1, g0 = state.history[-1], state.history[-2]
        out = g1.copy()
        axpy(0.5, g1 - g0, out, counter)
        return out
    g2, g1, g0 = state.history[-1], state.history[-2], state.history[-3]
    out = g2.copy()
    axpy(11.0 / 12.0, g2 - g1, out, counter)
    axpy(5.0 / 12.0, g0 - g1, out, counter)
    return out


@dataclass
class RunReport:
    """Aggregate cost record for one time-marching run.

    ``iterations`` sums Krylov iterations over every step (and every Newton
    iteration); ``macs``/``wall_seconds`` cover the stepping loop only, with
    matrix and preconditioner preparation reported in ``setup_macs`` /
    ``setup_seconds``.  ``solves`` keeps each linear solve's report in
    execution order for exact cost replay.
    """

    scheme: str
    steps: int
    converged: bool
    iterations: int
    macs: int
    wall_seconds: float
    peak_bytes: int
    setup_seconds: float
    setup_macs: int
    final_relative_residual: float
    solves: list[SolveReport] = field(default_factory=list)
    newton_iterations: list[int] = field(default_factory=list)
    newton_residuals: list[list[float]] = field(default_factory=list)


def _run_krylov(config, options, a, b, x0, pc, counter):
    if config.krylov == "cg":
        return cg(a, b, x0, pc, options.tol, options.maxit, counter)
    if config.krylov == "fgmres":
        return fgmres(a, b, x0, pc, options.restart, options.tol, options.maxit, counter)
    return bicgstab(a, b, x0, pc, options.tol, options.maxit, counter)


def _forcing(problem: RdProblem, t: float) -> np.ndarray:
    if problem.f_time is not None:
        f = np.asarray(problem.f_time(t), dtype=np.float64)
        if f.shape != (problem.mesh.n_nodes,):
            raise ValueError("f_time must return one value per node")
        return f
    return problem.f_field.values


def _nodal_term(problem: RdProblem, u_full: np.ndarray, t: float, counter: CostCounter) -> np.ndarray:
    f = _forcing(problem, t)
    if not problem.with_reaction:
        return f.copy()
    return u_full - vmul(u_full, u_full, counter) + f


def _imex_rhs(
    sys: AssembledSystem,
    theta: float,
    dt: float,
    u_int: np.ndarray,
    ab_full: np.ndarray,
    counter: CostCounter,
) -> np.ndarray:
    b = spmv(sys.m_ii, u_int, counter)
    if theta < 1.0:
        au = spmv(sys.a_ii, u_int, counter)
        axpy(-(1.0 - theta) * dt, au, b, counter)
    mf = spmv(sys.m_if, ab_full, counter)
    axpy(dt, mf, b, counter)
    return b


def _imex_loop(
    problem: RdProblem,
    sys: AssembledSystem,
    solve_step: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, SolveReport | None]],
    counter: CostCounter,
    collect: bool = False,
):
    u_int = sys.restrict(problem.u0.values)
    u_full = problem.u0.values.copy()
    state = Ab3State()
    trajectory = [u_full.copy()] if collect else None
    solves: list[SolveReport] = []
    for n in range(problem.n_steps):
        t_n = n * problem.dt
        state.push(_nodal_term(problem, u_full, t_n, counter))
        ab_full = ab3_combine(state, n, counter)
        b = _imex_rhs(sys, problem.theta, problem.dt, u_int, ab_full, counter)
        u_int, report = solve_step(b, u_int)
        if report is not None:
            solves.append(report)
            if not report.converged:
                raise SolverDivergedError(
                    "imex", n, f"linear solve stagnated ({report.breakdown or 'maxit'})"
                )
        u_full = sys.embed(u_int)
        if collect:
            trajectory.append(u_full.copy())
    return u_full, trajectory, solves


def imex_run(
    problem: RdProblem,
    config: MetaSolverConfig,
    options: SolverOptions = SolverOptions(),
    counter: CostCounter | None = None,
    direct: bool = False,
) -> tuple[ScalarField, RunReport]:
    """March the implicit-diffusion/explicit-reaction scheme to t_end.

    The fixed operator ``M + theta*dt*A`` is built once, along with the
    hybrid preconditioner of ``config``, and reused by every step's Krylov
    solve
    (warm-started from the previous state).  ``direct=True`` swaps each solve
    for a reused dense factorization, which is the reference trajectory.
    """
    counter = _sink(counter)
    setup_t0 = time.perf_counter()
    setup_m0 = counter.macs
    sys = assemble(problem.mesh, problem.k_field, counter=counter)
    s_matrix = csr_lincomb(1.0, sys.m_ii, problem.theta * problem.dt, sys.a_ii, counter)
    pc = None
    lu = None
    if direct:
        lu = LuFactorization.from_sparse(s_matrix, counter)
    elif config.preconditioned:
        pc = build_hybrid(s_matrix, config, options, mesh_n=problem.mesh.n, counter=counter)
    setup_seconds = time.perf_counter() - setup_t0
    setup_macs = counter.macs - setup_m0

    if direct:
        def solve_step(b, u_prev):
            return lu.solve(b, counter), None
    else:
        def solve_step(b, u_prev):
            return _run_krylov(config, options, s_matrix, b, u_prev, pc, counter)

    loop_t0 = time.perf_counter()
    loop_m0 = counter.macs
    u_full, _, solves = _imex_loop(problem, sys, solve_step, counter)
    report = RunReport(
        scheme="imex",
        steps=problem.n_steps,
        converged=True,
        iterations=sum(r.iterations for r in solves),
        macs=counter.macs - loop_m0,
        wall_seconds=time.perf_counter() - loop_t0,
        peak_bytes=counter.peak_bytes,
        setup_seconds=setup_seconds,
        setup_macs=setup_macs,
        final_relative_residual=solves[-1].final_relative_residual if solves else 0.0,
        solves=solves,
    )
    return ScalarField(problem.mesh, u_full), report


def _entry_positions(host: SparseMatrix, sub: SparseMatrix) -> np.ndarray:
    """Index of each entry of ``sub`` inside ``host``'s value array.

    Requires the host pattern to contain the sub pattern row by row.
    """
    if (host.nrows, host.ncols) != (sub.nrows, sub.ncols):
        raise ValueError("patterns live on different shapes")
    pos = np.empty(sub.nnz, dtype=np.int64)
    for i in range(sub.nrows):
        hlo, hhi = host.row_offsets[i], host.row_offsets[i + 1]
        slo, shi = sub.row_offsets[i], sub.row_offsets[i + 1]
        host_cols = host.col_indices[hlo:hhi]
        idx = np.searchsorted(host_cols, sub.col_indices[slo:shi])
        if np.any(idx >= hhi - hlo) or np.any(host_cols[np.minimum(idx, hhi - hlo - 1)] != sub.col_indices[slo:shi]):
            raise ValueError("host pattern does not contain the sub pattern")
        pos[slo:shi] = hlo + idx
    return pos


def _newton_residual(
    sys: AssembledSystem,
    theta: float,
    dt: float,
    u_int: np.ndarray,
    g_full: np.ndarray,
    c_n: np.ndarray,
    counter: CostCounter,
) -> np.ndarray:
    f_val = spmv(sys.m_ii, u_int, counter)
    au = spmv(sys.a_ii, u_int, counter)
    axpy(theta * dt, au, f_val, counter)
    mg = spmv(sys.m_if, g_full, counter)
    axpy(-theta * dt, mg, f_val, counter)
    return f_val - c_n


def _newton_loop(
    problem: RdProblem,
    sys: AssembledSystem,
    s_base: SparseMatrix,
    linear_solve: Callable[[SparseMatrix, np.ndarray, int], tuple[np.ndarray, SolveReport | None]],
    options: SolverOptions,
    counter: CostCounter,
    collect: bool = False,
):
    theta, dt = problem.theta, problem.dt
    n_int = sys.n_interior
    mass_pos = _entry_positions(s_base, sys.m_ii) if problem.with_reaction else None
    if problem.with_reaction:
        counter.alloc(8 * s_base.nnz)  # persistent Jacobian value buffer

    u_int = sys.restrict(problem.u0.values)
    u_full = problem.u0.values.copy()
    trajectory = [u_full.copy()] if collect else None
    solves: list[SolveReport] = []
    newton_iterations: list[int] = []
    newton_residuals: list[list[float]] = []

    for n in range(problem.n_steps):
        t_n, t_n1 = n * dt, (n + 1) * dt
        c_n = spmv(sys.m_ii, u_int, counter)
        if theta < 1.0:
            au = spmv(sys.a_ii, u_int, counter)
            axpy(-(1.0 - theta) * dt, au, c_n, counter)
            g_n = _nodal_term(problem, u_full, t_n, counter)
            mg = spmv(sys.m_if, g_n, counter)
            axpy((1.0 - theta) * dt, mg, c_n, counter)
        cscale = norm2(c_n, counter)

        residuals: list[float] = []
        k = 0
        f0 = floor = None
        while True:
            g = _nodal_term(problem, u_full, t_n1, counter)
            f_val = _newton_residual(sys, theta, dt, u_int, g, c_n, counter)
            fnorm = norm2(f_val, counter)
            residuals.append(fnorm)
            if f0 is None:
                f0 = fnorm
                # once the state is near stationary, the warm start already
                # sits at the rounding level of the residual evaluation; the
                # relative test alone can then never fire, so it gets an
                # absolute floor a safe factor above that level
                floor = _NEWTON_FLOOR_ULPS * _EPS * max(f0, cscale)
                if f0 <= floor:
                    break
            elif fnorm <= max(options.newton_tol * f0, floor):
                break
            if k >= options.newton_maxit:
                raise SolverDivergedError(
                    "newton", n, f"no contraction after {k} iterations", residuals
                )
            if problem.with_reaction:
                values = s_base.values.copy()
                weight = theta * dt * (1.0 - 2.0 * u_int)
                values[mass_pos] -= sys.m_ii.values * weight[sys.m_ii.col_indices]
                counter.add_macs(sys.m_ii.nnz + 2 * n_int)
                jac = s_base.with_values(values)
            else:
                jac = s_base
            delta, rep = linear_solve(jac, f_val, k)
            if rep is not None:
                solves.append(rep)
                if not rep.converged:
                    raise SolverDivergedError(
                        "newton", n, f"linear solve stagnated ({rep.breakdown or 'maxit'})", residuals
                    )
            axpy(-1.0, delta, u_int, counter)
            u_full = sys.embed(u_int)
            k += 1
        newton_iterations.append(k)
        newton_residuals.append(residuals)
        if collect:
            trajectory.append(u_full.copy())
    return u_full, trajectory, solves, newton_iterations, newton_residuals


def newton_run(
    problem: RdProblem,
    config: MetaSolverConfig,
    options: SolverOptions = SolverOptions(),
    counter: CostCounter | None = None,
) -> tuple[ScalarField, RunReport]:
    """March the theta-scheme with a Newton solve per step.

    With the reaction on, the (lumped) Jacobian changes with the state, so
    the hybrid preconditioner is reassembled for every Newton iteration on
    the one prolongation chain built during setup; the rebuild cost lands in
    the stepping loop, mirroring per-iteration setup costs.  Without the
    reaction the operator is constant and the preconditioner is built once.
    """
    counter = _sink(counter)
    setup_t0 = time.perf_counter()
    setup_m0 = counter.macs
    sys = assemble(problem.mesh, problem.k_field, counter=counter)
    s_base = csr_lincomb(1.0, sys.m_ii, problem.theta * problem.dt, sys.a_ii, counter)
    bases = None
    fixed_pc = None
    if config.preconditioned:
        bases = build_bases(s_base, config, mesh_n=problem.mesh.n, counter=counter)
        if not problem.with_reaction:
            fixed_pc = build_hybrid(
                s_base, config, options, mesh_n=problem.mesh.n, bases=bases, counter=counter
            )
    setup_seconds = time.perf_counter() - setup_t0
    setup_macs = counter.macs - setup_m0

    live_pc: list = [fixed_pc]

    def linear_solve(jac, rhs, k):
        if config.preconditioned and problem.with_reaction:
            if live_pc[0] is not None:
                live_pc[0].release()
            live_pc[0] = build_hybrid(
                jac, config, options, mesh_n=problem.mesh.n, bases=bases, counter=counter
            )
        x0 = np.zeros(jac.nrows)
        return _run_krylov(config, options, jac, rhs, x0, live_pc[0], counter)

    loop_t0 = time.perf_counter()
    loop_m0 = counter.macs
    u_full, _, solves, newton_its, newton_res = _newton_loop(
        problem, sys, s_base, linear_solve, options, counter
    )
    report = RunReport(
        scheme="newton",
        steps=problem.n_steps,
        converged=True,
        iterations=sum(r.iterations for r in solves),
        macs=counter.macs - loop_m0,
        wall_seconds=time.perf_counter() - loop_t0,
        peak_bytes=counter.peak_bytes,
        setup_seconds=setup_seconds,
        setup_macs=setup_macs,
        final_relative_residual=solves[-1].final_relative_residual if solves else 0.0,
        solves=solves,
        newton_iterations=newton_its,
        newton_residuals=newton_res,
    )
    return ScalarField(problem.mesh, u_full), report


def reference_solve(
    problem: RdProblem,
    scheme: str = "imex",
    dt: float | None = None,
    options: SolverOptions = SolverOptions(),
    counter: CostCounter | None = None,
) -> list[ScalarField]:
    """Direct-solver trajectory of the same marching scheme.

    Every linear system is solved with a dense factorization: one reused
    factorization for the fixed IMEX operator, a fresh one per Newton
    iteration.  Returns the full trajectory including the initial state;
    its final entry defines the relative-error criterion for iterative runs.
    """
    counter = _sink(counter)
    if dt is not None:
        problem = replace(problem, dt=dt)
    if scheme not in ("imex", "newton"):
        raise ValueError(f"scheme must be imex or newton, got {scheme!r}")
    sys = assemble(problem.mesh, problem.k_field, counter=counter)
    s_base = csr_lincomb(1.0, sys.m_ii, problem.theta * problem.dt, sys.a_ii, counter)
    if scheme == "imex":
        lu = LuFactorization.from_sparse(s_base, counter)

        def solve_step(b, u_prev):
            return lu.solve(b, counter), None

        _, trajectory, _ = _imex_loop(problem, sys, solve_step, counter, collect=True)
    else:
        def linear_solve(jac, rhs, k):
            lu = LuFactorization.from_sparse(jac, counter)
            x = lu.solve(rhs, counter)
            lu.release()
            return x, None

        _, trajectory, _, _, _ = _newton_loop(
            problem, sys, s_base, linear_solve, options, counter, collect=True
        )
    return [ScalarField(problem.mesh, u) for u in trajectory]
