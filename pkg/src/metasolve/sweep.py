"""Configuration-grid execution: enumerate meta-solvers, run them on one shared
benchmark draw, and persist performance rows to CSV.

The manifest fixes the benchmark (lattice size, field seed, stepping scheme,
horizon) and one value list per configuration axis.  ``enumerate_configs``
takes the Cartesian product in the fixed axis order basis, krylov, smoother,
strategy, levels; ``run_sweep`` executes each configuration sequentially
against the same field draw and direct reference trajectory, so criteria are
comparable across rows, and appends one CSV row per configuration.

Results schema (exact header)::

    config_id,basis,krylov,smoother,strategy,levels,scheme,converged,
    rel_error,wall_seconds,iterations,peak_megabytes,macs,setup_seconds,
    ave_macs,seed

Floats are written with ``repr`` so every non-timing column reproduces bit
for bit under a rerun; ``wall_seconds`` and ``setup_seconds`` are the only
clock-dependent columns.  A diverged or numerically failed run yields a row
with ``converged = false`` and empty criteria cells, which the records
importer skips.  Rerunning against an existing file appends only the
configurations whose ids are not yet present.  The optional thread-parallel
mode keeps a single writer and stamps the file with a comment marking wall
times as contended.

Manifest files are flat ``key = value`` text; ``#`` starts a comment and
axis values are comma-separated::

    n = 31
    seed = 0
    scheme = imex
    output = results.csv
    basis = geometric, random_qr:sweeps=3:seed=1
    krylov = cg, bicgstab
    smoother = gauss_seidel
    strategy = 3-1-3
    levels = 2, 3
"""

from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .basis import RankDeficientError
from .config import MetaSolverConfig, SmoothingStrategy, SolverOptions
from .linalg import CostCounter, NumericalError
from .timestep import (
    RdProblem,
    RunReport,
    SolverDivergedError,
    benchmark_problem,
    imex_run,
    newton_run,
    reference_solve,
)

RESULTS_HEADER = (
    "config_id",
    "basis",
    "krylov",
    "smoother",
    "strategy",
    "levels",
    "scheme",
    "converged",
    "rel_error",
    "wall_seconds",
    "iterations",
    "peak_megabytes",
    "macs",
    "setup_seconds",
    "ave_macs",
    "seed",
)

# the coarse-basis axis pairs the geometric hierarchy with four randomized
# variants, standing in for a family of trained coarse spaces
DEFAULT_BASIS_AXIS = (
    "geometric",
    "random_qr:sweeps=1:seed=1",
    "random_qr:sweeps=3:seed=1",
    "random_qr:sweeps=3:seed=2",
    "random_qr:sweeps=5:seed=1",
)
DEFAULT_KRYLOV_AXIS = ("cg", "fgmres", "bicgstab")
DEFAULT_SMOOTHER_AXIS = ("jacobi", "gauss_seidel", "sor", "ssor")
DEFAULT_STRATEGY_AXIS = ("1-1-1", "3-1-3", "5-1-5", "7-1-7", "9-1-9")
DEFAULT_LEVELS_AXIS = (1, 2, 3)

_RUN_FAILURES = (SolverDivergedError, NumericalError, RankDeficientError)
_PARALLEL_STAMP = "# timing-unreliable: parallel execution, wall times contended"


@dataclass(frozen=True)
class SweepManifest:
    """Benchmark description plus one value list per configuration axis."""

    n: int = 31
    dt: float | None = None
    t_end: float = 1.0
    theta: float = 1.0
    seed: int = 0
    scheme: str = "imex"
    with_reaction: bool = True
    tol: float = 1e-12
    maxit: int = 100000
    restart: int = 50
    output: str = "results.csv"
    basis: tuple[str, ...] = DEFAULT_BASIS_AXIS
    krylov: tuple[str, ...] = DEFAULT_KRYLOV_AXIS
    smoother: tuple[str, ...] = DEFAULT_SMOOTHER_AXIS
    strategy: tuple[str, ...] = DEFAULT_STRATEGY_AXIS
    levels: tuple[int, ...] = DEFAULT_LEVELS_AXIS

    def __post_init__(self) -> None:
        if self.scheme not in ("imex", "newton"):
            raise ValueError(f"scheme must be imex or newton, got {self.scheme!r}")
        for axis in ("basis", "krylov", "smoother", "strategy", "levels"):
            if len(getattr(self, axis)) == 0:
                raise ValueError(f"axis {axis!r} is empty")
        for text in self.strategy:
            SmoothingStrategy.parse(text)

    def problem(self) -> RdProblem:
        return benchmark_problem(
            n=self.n,
            seed=self.seed,
            theta=self.theta,
            dt=self.dt,
            t_end=self.t_end,
            with_reaction=self.with_reaction,
        )

    def options(self) -> SolverOptions:
        return SolverOptions(tol=self.tol, maxit=self.maxit, restart=self.restart)


_AXIS_KEYS = ("basis", "krylov", "smoother", "strategy", "levels")
_BOOL_VALUES = {"true": True, "false": False}


def load_manifest(path: str) -> SweepManifest:
    """Parse a flat key = value manifest file (format in the module docstring)."""
    spec = {f.name: f.type for f in fields(SweepManifest)}
    values: dict = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            if key not in spec:
                raise ValueError(f"{path}:{lineno}: unknown manifest key {key!r}")
            if key in _AXIS_KEYS:
                parts = tuple(p.strip() for p in value.split(",") if p.strip())
                values[key] = tuple(int(p) for p in parts) if key == "levels" else parts
            elif key in ("n", "seed", "maxit", "restart"):
                values[key] = int(value)
            elif key in ("dt", "t_end", "theta", "tol"):
                values[key] = float(value)
            elif key == "with_reaction":
                if value.lower() not in _BOOL_VALUES:
                    raise ValueError(f"{path}:{lineno}: with_reaction must be true or false")
                values[key] = _BOOL_VALUES[value.lower()]
            else:
                values[key] = value
    return SweepManifest(**values)


def enumerate_configs(manifest: SweepManifest) -> list[MetaSolverConfig]:
    """Cartesian product over the axes, in axis order, stable under reruns."""
    configs = []
    for basis, krylov, smoother, strategy, levels in itertools.product(
        manifest.basis, manifest.krylov, manifest.smoother, manifest.strategy, manifest.levels
    ):
        configs.append(
            MetaSolverConfig(
                basis, krylov, smoother, SmoothingStrategy.parse(strategy), levels,
                scheme=manifest.scheme,
            )
        )
    return configs


def config_id(index: int, total: int) -> str:
    width = max(4, len(str(total)))
    return f"c{index + 1:0{width}d}"


def _march(problem: RdProblem, config: MetaSolverConfig, options: SolverOptions, counter: CostCounter):
    if config.scheme == "newton":
        return newton_run(problem, config, options, counter)
    return imex_run(problem, config, options, counter)


def run_config(
    problem: RdProblem,
    config: MetaSolverConfig,
    options: SolverOptions,
    reference: np.ndarray,
) -> tuple[dict, RunReport | None]:
    """Execute one configuration; returns the row cells and the run report.

    Criteria cells are empty strings and ``converged`` is false when the run
    diverges or breaks down numerically.  ``ave_macs`` divides the loop MACs
    by the number of outer linear solves (0.0 for a run that never solved).
    """
    row = {
        "basis": config.basis_kind,
        "krylov": config.krylov,
        "smoother": config.smoother,
        "strategy": f"{config.strategy.pre}-1-{config.strategy.post}",
        "levels": str(config.levels),
        "scheme": config.scheme,
    }
    counter = CostCounter()
    try:
        u, report = _march(problem, config, options, counter)
    except _RUN_FAILURES:
        row["converged"] = "false"
        for name in ("rel_error", "wall_seconds", "iterations", "peak_megabytes",
                     "macs", "setup_seconds", "ave_macs"):
            row[name] = ""
        return row, None
    rel_error = float(
        np.linalg.norm(u.values - reference) / np.linalg.norm(reference)
    )
    ave_macs = report.macs / len(report.solves) if report.solves else 0.0
    row["converged"] = "true"
    row["rel_error"] = repr(rel_error)
    row["wall_seconds"] = repr(report.wall_seconds)
    row["iterations"] = str(report.iterations)
    row["peak_megabytes"] = repr(report.peak_bytes / 1e6)
    row["macs"] = str(report.macs)
    row["setup_seconds"] = repr(report.setup_seconds)
    row["ave_macs"] = repr(ave_macs)
    return row, report


@dataclass
class SweepResult:
    """What one ``run_sweep`` call did to the results file."""

    path: str
    total: int
    executed: int
    skipped: int
    failures: int
    failed_ids: list[str] = field(default_factory=list)


def _completed_ids(path: str) -> set[str]:
    done = set()
    with open(path, newline="", encoding="utf-8") as handle:
        rows = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(rows, None)
        if header is None or tuple(header) != RESULTS_HEADER:
            raise ValueError(f"{path} does not carry the results header")
        for cells in rows:
            if cells:
                done.add(cells[0])
    return done


def run_sweep(
    manifest: SweepManifest,
    output: str | None = None,
    parallel: bool = False,
    workers: int | None = None,
) -> SweepResult:
    """Run every configuration of the manifest not yet present in the output.

    Sequential by default so wall times are uncontended; ``parallel=True``
    dispatches runs to a thread pool but keeps a single writer and stamps the
    file as timing-unreliable.  Rows are appended in configuration order and
    flushed one by one, so an interrupted sweep resumes where it stopped.
    """
    path = manifest.output if output is None else output
    configs = enumerate_configs(manifest)
    ids = [config_id(i, len(configs)) for i in range(len(configs))]
    fresh = not os.path.exists(path)
    done = set() if fresh else _completed_ids(path)
    pending = [(cid, config) for cid, config in zip(ids, configs) if cid not in done]

    result = SweepResult(
        path=path, total=len(configs), executed=len(pending), skipped=len(done), failures=0
    )
    if not pending and not fresh:
        return result

    problem = manifest.problem()
    options = manifest.options()
    reference = reference_solve(problem, scheme=manifest.scheme, options=options)[-1].values

    def execute(item):
        cid, config = item
        row, _ = run_config(problem, config, options, reference)
        row["config_id"] = cid
        row["seed"] = str(manifest.seed)
        return row

    with open(path, "a", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        if fresh:
            writer.writerow(RESULTS_HEADER)
        if parallel and pending:
            handle.write(_PARALLEL_STAMP + "\n")
        if parallel:
            pool = ThreadPoolExecutor(max_workers=workers)
            rows = pool.map(execute, pending)
        else:
            rows = map(execute, pending)
        try:
            for row in rows:
                if row["converged"] == "false":
                    result.failures += 1
                    result.failed_ids.append(row["config_id"])
                writer.writerow([row[name] for name in RESULTS_HEADER])
                handle.flush()
        finally:
            if parallel:
                pool.shutdown()
    return result
