"""Independent structural recount of reported MAC totals.

Every ``macs`` figure the solvers report is re-derived here from structural
quantities alone: matrix dimensions and sparsity counts, preconditioner level
shapes, and the iteration structure recorded in solve and run reports.  No
counter is read and none of the charging helpers in the solver modules are
called; each per-operation cost is restated as plain integer arithmetic, so
the two paths agree only if the instrumented code charged exactly what it
executed.

Replay entry points:

* ``solve_macs`` for one Krylov ``SolveReport``,
* ``pc_apply_macs`` / ``pc_build_macs`` for a ``HybridShape``,
* ``run_macs`` for a full time-marching ``RunReport`` (stepping loop only,
  matching ``RunReport.macs``; setup is timed and counted separately and is
  not replayed here).

``run_macs`` reassembles the run's operators without a counter to obtain the
shapes, then replays the recorded iteration structure step by step.  Newton
rebuilds reuse the setup-time basis chain, and the coarse Galerkin sparsity
is decided by the overlap of that fixed chain with the fixed Jacobian
pattern, so one uncounted rebuild supplies the per-iteration rebuild charge.

A report whose partial work cannot be reconstructed from its recorded
structure (an FGMRES least-squares breakdown, or a truncated Arnoldi cycle
from a recovered one) is refused with ``ReplayUnsupportedError`` rather than
approximated.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import MetaSolverConfig, SolverOptions
from .krylov import SolveReport
from .linalg import SparseMatrix, csr_lincomb
from .mesh import assemble
from .precond import HybridPreconditioner, build_bases, build_hybrid
from .timestep import RdProblem, RunReport

_RESYNC_PERIOD = 50
_SPECTRUM_STEPS = 30

KRYLOV_KINDS = ("cg", "fgmres", "bicgstab")


class ReplayUnsupportedError(ValueError):
    """The report's charges are not recoverable from its recorded structure."""


@dataclass(frozen=True)
class OperatorShape:
    """Sparsity counts of one square operator."""

    rows: int
    nnz: int
    nnz_lower: int
    nnz_upper: int


@dataclass(frozen=True)
class LevelShape:
    """One smoothing level; ``coarse_cols`` is None on a smoothing-only level."""

    op: OperatorShape
    coarse_cols: int | None


@dataclass(frozen=True)
class HybridShape:
    """Level structure of a hybrid preconditioner, dimensions only."""

    smoother: str
    pre: int
    post: int
    levels: tuple[LevelShape, ...]
    coarse: OperatorShape | None


def operator_shape(a: SparseMatrix) -> OperatorShape:
    return OperatorShape(
        rows=a.nrows,
        nnz=a.nnz,
        nnz_lower=a.nnz_strict_lower,
        nnz_upper=a.nnz_strict_upper,
    )


def pc_shape(pc: HybridPreconditioner) -> HybridShape:
    """Read the level dimensions off a built preconditioner."""
    levels = tuple(
        LevelShape(
            op=operator_shape(level.a),
            coarse_cols=None if level.basis is None else level.basis.n_coarse,
        )
        for level in pc.levels
    )
    coarse = operator_shape(pc.coarse_a) if pc.coarse_a is not None else None
    return HybridShape(
        smoother=pc.smoother,
        pre=pc.strategy.pre,
        post=pc.strategy.post,
        levels=levels,
        coarse=coarse,
    )


def relaxation_sweep_macs(kind: str, shape: OperatorShape) -> int:
    """One relaxation sweep: residual plus the splitting solve."""
    n, nnz = shape.rows, shape.nnz
    if kind == "jacobi":
        return nnz + n
    if kind == "gauss_seidel":
        return nnz + shape.nnz_lower + n
    if kind == "sor":
        return nnz + shape.nnz_lower + 2 * n
    if kind == "ssor":
        return nnz + shape.nnz_lower + shape.nnz_upper + 6 * n
    raise ValueError(f"unknown relaxation kind {kind!r}")


def chebyshev_macs(shape: OperatorShape, steps: int) -> int:
    """One Chebyshev call: initial residual, uniform steps, resyncs."""
    if steps <= 0:
        return 0
    resyncs = (steps - 1) // _RESYNC_PERIOD
    return shape.nnz + steps * (shape.nnz + 6 * shape.rows) + resyncs * shape.nnz


def spectrum_macs(shape: OperatorShape) -> int:
    """Power iteration for the largest eigenvalue: seed norms plus the sweeps."""
    return 2 * shape.rows + _SPECTRUM_STEPS * (shape.nnz + 2 * shape.rows)


def lu_factor_macs(m: int) -> int:
    return m * (m - 1) * (2 * m - 1) // 6 + m * (m - 1) // 2


def lu_solve_macs(m: int) -> int:
    return m * m


def _smooth_macs(shape: HybridShape, level: LevelShape, sweeps: int) -> int:
    if sweeps == 0:
        return 0
    if shape.smoother == "chebyshev":
        return chebyshev_macs(level.op, sweeps)
    return sweeps * relaxation_sweep_macs(shape.smoother, level.op)


def pc_apply_macs(shape: HybridShape) -> int:
    """One sandwich cycle over the level structure."""
    total = 0
    for idx, level in enumerate(shape.levels):
        total += _smooth_macs(shape, level, shape.pre)
        total += _smooth_macs(shape, level, shape.post)
        if level.coarse_cols is not None:
            if shape.pre > 0:
                total += level.op.nnz  # residual matvec after pre-smoothing
            total += 2 * level.op.rows * level.coarse_cols  # restrict + prolong
            if idx + 1 == len(shape.levels):
                total += lu_solve_macs(shape.coarse.rows)
    return total


def pc_build_macs(shape: HybridShape) -> int:
    """Rebuild on an existing basis chain: Galerkin products, spectra, factorization."""
    total = 0
    for level in shape.levels:
        if level.coarse_cols is not None:
            m = level.coarse_cols
            total += m * level.op.nnz + m * m * level.op.rows
        if shape.smoother == "chebyshev":
            total += spectrum_macs(level.op)
    if shape.coarse is not None:
        total += lu_factor_macs(shape.coarse.rows)
    return total


def _cg_macs(report: SolveReport, shape: OperatorShape, pc_apply: int) -> int:
    n, nnz = shape.rows, shape.nnz
    k = report.iterations
    total = nnz + 2 * n  # initial residual and the two norms
    if report.converged and k == 0:
        return total
    total += pc_apply + n  # first preconditioner application and r'z
    full = nnz + 6 * n + pc_apply
    if report.breakdown == "indefinite":
        return total + k * full + nnz + n
    if report.converged:
        return total + (k - 1) * full + nnz + 4 * n
    return total + k * full


def _fgmres_macs(report: SolveReport, shape: OperatorShape, pc_apply: int, restart: int) -> int:
    n, nnz = shape.rows, shape.nnz
    if report.breakdown == "least_squares":
        raise ReplayUnsupportedError("least-squares breakdown truncates a cycle mid-iteration")
    if sum(report.cycle_sizes) != report.iterations:
        raise ReplayUnsupportedError("cycle sizes do not account for the iteration count")
    for size in report.cycle_sizes[:-1]:
        if size != restart:
            raise ReplayUnsupportedError("a non-final cycle stopped early (recovered breakdown)")
    total = n  # right-hand side norm
    if report.converged and report.iterations == 0:
        return total + nnz + n
    for size in report.cycle_sizes:
        total += nnz + 2 * n  # cycle residual and norm, first basis vector
        for j in range(size):
            total += pc_apply + nnz + 2 * (j + 1) * n + 2 * n
        if size > 0:
            total += size * (size + 1) // 2 + size * n  # triangle solve, update
    return total


def _bicgstab_macs(report: SolveReport, shape: OperatorShape, pc_apply: int) -> int:
    n, nnz = shape.rows, shape.nnz
    total = nnz + 2 * n
    k = report.iterations
    if report.converged and k == 0:
        return total

    def full(it: int) -> int:
        return 2 * nnz + 2 * pc_apply + 12 * n - (2 * n if it == 1 else 0)

    def search_update(it: int) -> int:
        return 0 if it == 1 else 2 * n

    total += sum(full(it) for it in range(1, k + 1))
    if report.breakdown == "rho":
        return total + n
    if report.breakdown == "alpha":
        return total + n + search_update(k + 1) + pc_apply + nnz + n
    if report.breakdown == "omega":
        return total + 2 * nnz + 2 * pc_apply + 5 * n + search_update(k + 1)
    if report.half_final:
        # the final iteration stopped after the s residual
        return total - full(k) + nnz + pc_apply + 5 * n + search_update(k)
    return total


def solve_macs(
    kind: str,
    report: SolveReport,
    shape: OperatorShape,
    pc_apply: int = 0,
    restart: int = 50,
    zero_rhs: bool = False,
) -> int:
    """Replay one Krylov solve from its report.

    ``pc_apply`` is the charge of one preconditioner application (0 when
    unpreconditioned); ``zero_rhs`` marks the trivial early exit that never
    forms a residual.
    """
    if kind not in KRYLOV_KINDS:
        raise ValueError(f"unknown krylov kind {kind!r}")
    if zero_rhs:
        return shape.rows
    if kind == "cg":
        return _cg_macs(report, shape, pc_apply)
    if kind == "fgmres":
        return _fgmres_macs(report, shape, pc_apply, restart)
    return _bicgstab_macs(report, shape, pc_apply)


def _had_zero_rhs(report: SolveReport) -> bool:
    # a zero right-hand side exits with the exact sentinel history [0.0];
    # a nonzero system converging at entry carries its rounded residual
    return (
        report.iterations == 0
        and report.converged
        and report.residual_history == [0.0]
    )


@dataclass(frozen=True)
class _RunShapes:
    n: int
    n_full: int
    nnz_m: int
    nnz_a: int
    nnz_mif: int
    system: OperatorShape
    pc_apply: int
    pc_build: int


def _collect_shapes(problem: RdProblem, config: MetaSolverConfig, options: SolverOptions) -> _RunShapes:
    sys = assemble(problem.mesh, problem.k_field)
    s_matrix = csr_lincomb(1.0, sys.m_ii, problem.theta * problem.dt, sys.a_ii)
    apply_cost = build_cost = 0
    if config.preconditioned:
        bases = build_bases(s_matrix, config, mesh_n=problem.mesh.n)
        pc = build_hybrid(s_matrix, config, options, mesh_n=problem.mesh.n, bases=bases)
        shape = pc_shape(pc)
        apply_cost = pc_apply_macs(shape)
        build_cost = pc_build_macs(shape)
    return _RunShapes(
        n=sys.n_interior,
        n_full=problem.mesh.n_nodes,
        nnz_m=sys.m_ii.nnz,
        nnz_a=sys.a_ii.nnz,
        nnz_mif=sys.m_if.nnz,
        system=operator_shape(s_matrix),
        pc_apply=apply_cost,
        pc_build=build_cost,
    )


def _imex_glue_macs(problem: RdProblem, shapes: _RunShapes, step: int) -> int:
    total = shapes.n_full if problem.with_reaction else 0  # nodal reaction
    total += 0 if step == 0 else shapes.n_full if step == 1 else 2 * shapes.n_full
    total += shapes.nnz_m + shapes.nnz_mif + shapes.n  # rhs assembly
    if problem.theta < 1.0:
        total += shapes.nnz_a + shapes.n
    return total


def _imex_macs(
    problem: RdProblem, config: MetaSolverConfig, options: SolverOptions,
    report: RunReport, shapes: _RunShapes,
) -> int:
    total = sum(_imex_glue_macs(problem, shapes, step) for step in range(report.steps))
    if not report.solves:
        # direct marching: one reused factorization, a dense solve per step
        return total + report.steps * lu_solve_macs(shapes.n)
    if len(report.solves) != report.steps:
        raise ReplayUnsupportedError("expected one linear solve per step")
    for solve in report.solves:
        total += solve_macs(
            config.krylov, solve, shapes.system, shapes.pc_apply,
            options.restart, zero_rhs=_had_zero_rhs(solve),
        )
    return total


def _newton_macs(
    problem: RdProblem, config: MetaSolverConfig, options: SolverOptions,
    report: RunReport, shapes: _RunShapes,
) -> int:
    if len(report.newton_iterations) != report.steps:
        raise ReplayUnsupportedError("expected one Newton iteration count per step")
    if sum(report.newton_iterations) != len(report.solves):
        raise ReplayUnsupportedError("solve count does not match Newton iteration counts")
    reaction = problem.with_reaction
    eval_cost = (shapes.n_full if reaction else 0) + shapes.nnz_m + shapes.nnz_a + shapes.nnz_mif + 3 * shapes.n
    rebuild = shapes.pc_build if config.preconditioned and reaction else 0
    total = 0
    solve_at = 0
    for k in report.newton_iterations:
        total += shapes.nnz_m  # constant part of the step residual
        if problem.theta < 1.0:
            total += shapes.nnz_a + shapes.n
            total += (shapes.n_full if reaction else 0) + shapes.nnz_mif + shapes.n
        total += shapes.n  # floor scale norm
        total += (k + 1) * eval_cost
        for _ in range(k):
            if reaction:
                total += shapes.nnz_m + 2 * shapes.n  # Jacobian refresh
            total += rebuild
            solve = report.solves[solve_at]
            solve_at += 1
            total += solve_macs(
                config.krylov, solve, shapes.system, shapes.pc_apply,
                options.restart, zero_rhs=_had_zero_rhs(solve),
            )
            total += shapes.n  # accepted update
    return total


def run_macs(
    problem: RdProblem,
    config: MetaSolverConfig,
    report: RunReport,
    options: SolverOptions = SolverOptions(),
) -> int:
    """Replay a time-marching report; returns the recounted stepping-loop MACs.

    The result corresponds to ``report.macs`` and is built purely from the
    problem's structural dimensions and the report's recorded iteration
    structure, for comparison by exact integer equality.
    """
    shapes = _collect_shapes(problem, config, options)
    if report.scheme == "imex":
        return _imex_macs(problem, config, options, report, shapes)
    if report.scheme == "newton":
        return _newton_macs(problem, config, options, report, shapes)
    raise ValueError(f"unknown scheme {report.scheme!r}")
