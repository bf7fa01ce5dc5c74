"""Command-line front end for the meta-solver pipeline.

One subcommand per workflow stage: ``sweep`` executes a manifest grid,
``solve`` runs a single configuration and prints its six criteria,
``pareto`` extracts the non-dominated rows plus a 3-criterion projection for
external plotting, ``prefer`` ranks Pareto members under preference weights,
``rediscover`` searches for weights selecting a given member, and
``grf-sample`` / ``mesh-info`` expose the benchmark ingredients.

Output files are CSV; everything else goes to stdout, diagnostics to stderr.
Exit code 0 means the requested artifact was fully produced.  The
``METASOLVE_SEED`` environment variable supplies the default field seed for
subcommands that take ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .basis import coarsen_chain
from .config import MetaSolverConfig, SmoothingStrategy, SolverOptions
from .linalg import CostCounter
from .mesh import GrfSpec, build_mesh, grf_sample
from .moo import (
    CRITERIA,
    FEASIBLE,
    INFEASIBLE,
    PreferenceWeights,
    build_front,
    load_records,
    pareto_set,
    preference_rank,
    rediscover,
    save_records,
)
from .sweep import load_manifest, run_sweep
from .timestep import (
    SolverDivergedError,
    benchmark_problem,
    imex_run,
    newton_run,
    reference_solve,
)

SEED_ENV = "METASOLVE_SEED"
_WEIGHT_SUM_TOL = 1e-9


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _load(path: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    records = load_records(path)
    if not records:
        raise ValueError(f"{path} holds no converged records")
    return records


def cmd_sweep(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    try:
        result = run_sweep(
            manifest, output=args.output, parallel=args.parallel, workers=args.workers
        )
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    note = f", {result.skipped} already done" if result.skipped else ""
    runs = f"{result.executed} run" + ("" if result.executed == 1 else "s")
    failures = f"{result.failures} failure" + ("" if result.failures == 1 else "s")
    print(f"{runs}, {failures}{note}")
    print(f"results: {result.path}")
    return 0


def _solve_config(args) -> MetaSolverConfig:
    return MetaSolverConfig(
        args.basis,
        args.krylov,
        args.smoother,
        SmoothingStrategy.parse(args.strategy),
        args.levels,
        scheme=args.scheme,
    )


def cmd_solve(args) -> int:
    try:
        seed = _resolve_seed(args.seed)
        config = _solve_config(args)
        problem = benchmark_problem(
            n=args.n,
            seed=seed,
            theta=args.theta,
            dt=args.dt,
            t_end=args.t_end,
            with_reaction=not args.no_reaction,
        )
        options = SolverOptions(tol=args.tol, maxit=args.maxit, restart=args.restart)
    except ValueError as exc:
        return _fail(str(exc))
    counter = CostCounter()
    march = newton_run if args.scheme == "newton" else imex_run
    try:
        u, report = march(problem, config, options, counter)
    except SolverDivergedError as exc:
        return _fail(str(exc))
    reference = reference_solve(problem, scheme=args.scheme, options=options)[-1].values
    rel_error = float(np.linalg.norm(u.values - reference) / np.linalg.norm(reference))
    ave = report.macs / len(report.solves) if report.solves else 0.0
    print(f"scheme          {config.scheme}")
    print(f"config          {config.basis_kind} {config.krylov} {config.smoother} "
          f"{config.strategy.pre}-1-{config.strategy.post} levels={config.levels}")
    print(f"steps           {report.steps}")
    print(f"rel_error       {rel_error:.6e}")
    print(f"wall_seconds    {report.wall_seconds:.6f}")
    print(f"iterations      {report.iterations}")
    print(f"peak_megabytes  {report.peak_bytes / 1e6:.6f}")
    print(f"macs            {report.macs}")
    print(f"setup_seconds   {report.setup_seconds:.6f}")
    print(f"ave_macs        {ave:.2f}")
    return 0


def cmd_pareto(args) -> int:
    names = tuple(name.strip() for name in args.projection.split(","))
    unknown = [name for name in names if name not in CRITERIA]
    if unknown:
        return _fail(
            f"unknown criterion {unknown[0]!r}; valid names: {', '.join(CRITERIA)}"
        )
    if len(names) != 3:
        return _fail(f"projection needs exactly 3 criterion names, got {len(names)}")
    try:
        records = _load(args.results)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    indices = pareto_set(records)
    members = [records[i] for i in indices]
    values = np.array([vec.as_array() for _, vec in members])
    degenerate = [
        name
        for name in names
        if values[:, CRITERIA.index(name)].max() == values[:, CRITERIA.index(name)].min()
    ]

    pareto_out = args.pareto_out or _derived(args.results, "_pareto.csv")
    projection_out = args.projection_out or _derived(args.results, "_projection.csv")
    try:
        save_records(pareto_out, members)
        with open(projection_out, "w", newline="", encoding="utf-8") as handle:
            if degenerate:
                handle.write(f"# degenerate: {','.join(degenerate)}\n")
            writer = csv.writer(handle)
            writer.writerow(("config_id",) + names)
            columns = [CRITERIA.index(name) for name in names]
            for (cid, _), row in zip(members, values):
                writer.writerow([cid] + [repr(float(row[j])) for j in columns])
    except OSError as exc:
        return _fail(str(exc))
    print(f"pareto front: {len(members)} of {len(records)} records")
    print(f"members: {pareto_out}")
    print(f"projection ({','.join(names)}): {projection_out}")
    return 0


def _derived(results_path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(results_path)
    return stem + suffix


def _parse_weights(text: str) -> PreferenceWeights:
    try:
        values = np.array([float(part) for part in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ValueError(f"weights must be comma-separated reals, got {text!r}") from None
    if values.size != len(CRITERIA):
        raise ValueError(f"expected {len(CRITERIA)} weights, got {values.size}")
    if np.any(values < 0.0):
        raise ValueError("weights must be nonnegative")
    total = float(values.sum())
    if abs(total - 1.0) > _WEIGHT_SUM_TOL:
        raise ValueError(f"weights are off the simplex: they sum to {total!r}")
    return PreferenceWeights(values / total)


def cmd_prefer(args) -> int:
    try:
        weights = _parse_weights(args.weights)
        records = _load(args.results)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    indices = pareto_set(records)
    if len(indices) == 1:
        cid, vec = records[indices[0]]
        print("single-member front; rescaled coordinates are undefined", file=sys.stderr)
        print("rank config_id score " + " ".join(CRITERIA))
        print(f"1 {cid} 0.0 " + " ".join(repr(float(v)) for v in vec.as_array()))
        return 0
    front = build_front(records)
    ranking = preference_rank(front, weights, args.k)
    if ranking.clipped:
        print(
            f"front has only {len(front.pareto_indices)} members; showing all",
            file=sys.stderr,
        )
    header = ["rank", "config_id", "score"]
    header += list(CRITERIA) + [f"{name}_rescaled" for name in CRITERIA]
    print(" ".join(header))
    for rank, (index, cid, score) in enumerate(
        zip(ranking.indices, ranking.ids, ranking.scores), start=1
    ):
        raw = front.records[index][1].as_array()
        rescaled = front.rescaled[front.member_position(index)]
        cells = [str(rank), cid, f"{score:.9f}"]
        cells += [repr(float(v)) for v in raw]
        cells += [f"{v:.9f}" for v in rescaled]
        print(" ".join(cells))
    return 0


def cmd_rediscover(args) -> int:
    try:
        records = _load(args.results)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    ids = [cid for cid, _ in records]
    if args.config_id not in ids:
        return _fail(f"unknown id {args.config_id!r}: not present in {args.results}")
    index = ids.index(args.config_id)
    indices = pareto_set(records)
    if index not in indices:
        return _fail(f"{args.config_id!r} is dominated, not a Pareto member")
    if len(indices) == 1:
        weights = PreferenceWeights.uniform(len(CRITERIA))
        _print_weights(weights)
        print(f"verified: {args.config_id} is the only Pareto member")
        return 0
    front = build_front(records)
    result = rediscover(front, index)
    if result.status == INFEASIBLE:
        print("infeasible (nonconvex region)")
        return 0
    if result.status != FEASIBLE:
        return _fail("numeric failure in the weight search")
    _print_weights(result.weights)
    top = preference_rank(front, result.weights, 1)
    if top.ids[0] == args.config_id:
        print(f"verified: preference_rank rank-1 is {args.config_id}")
    else:
        pos = front.member_position(index)
        score = float(front.rescaled[pos] @ result.weights.values)
        print(
            f"verified: ties with {top.ids[0]} at score difference "
            f"{abs(score - top.scores[0]):.3e}"
        )
    return 0


def _print_weights(weights: PreferenceWeights) -> None:
    for name, value in zip(CRITERIA, weights.values):
        print(f"lambda_{name} = {value:.9f}")


def cmd_grf_sample(args) -> int:
    try:
        seed = _resolve_seed(args.seed)
        mesh = build_mesh(args.n)
        floor = None if args.no_floor else args.floor
        spec = GrfSpec(args.mean, args.scale, args.length, floor, seed)
        field = grf_sample(spec, mesh)
        field.to_csv(args.output)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    values = field.values
    print(f"wrote {values.size} node values to {args.output}")
    print(f"min {values.min():.6f}  mean {values.mean():.6f}  max {values.max():.6f}")
    return 0


def cmd_mesh_info(args) -> int:
    try:
        mesh = build_mesh(args.n)
    except ValueError as exc:
        return _fail(str(exc))
    print(f"lattice         {args.n} x {args.n}")
    print(f"spacing         {mesh.h!r}")
    print(f"nodes           {mesh.n_nodes}")
    print(f"interior        {mesh.n_interior}")
    try:
        chain = coarsen_chain(args.n, args.levels)
    except ValueError as exc:
        print(f"coarsening      unavailable for {args.levels} levels ({exc})")
        return 0
    sides = " -> ".join(str(side) for side in chain)
    interiors = " -> ".join(str((side - 2) * (side - 2)) for side in chain)
    print(f"coarsening      {sides} nodes per side")
    print(f"unknowns        {interiors}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metasolve", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a manifest's configuration grid")
    p.add_argument("manifest", help="flat key = value manifest file")
    p.add_argument("--output", help="results CSV path (defaults to the manifest's)")
    p.add_argument("--parallel", action="store_true", help="thread-parallel runs; wall times become unreliable")
    p.add_argument("--workers", type=int, help="thread count for --parallel")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("solve", help="run one configuration and print its criteria")
    p.add_argument("--n", type=int, default=31)
    p.add_argument("--seed", type=int, default=None, help=f"field seed (default ${SEED_ENV} or 0)")
    p.add_argument("--scheme", choices=("imex", "newton"), default="imex")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--no-reaction", action="store_true")
    p.add_argument("--basis", default="geometric")
    p.add_argument("--krylov", default="bicgstab")
    p.add_argument("--smoother", default="gauss_seidel")
    p.add_argument("--strategy", default="3-1-3")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--maxit", type=int, default=100000)
    p.add_argument("--restart", type=int, default=50)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("pareto", help="extract the Pareto front and a 3-D projection")
    p.add_argument("results", help="sweep results CSV")
    p.add_argument("--projection", default="wall_seconds,rel_error,peak_megabytes",
                   help="three comma-separated criterion names")
    p.add_argument("--pareto-out", help="front CSV path (default <results>_pareto.csv)")
    p.add_argument("--projection-out", help="projection CSV path (default <results>_projection.csv)")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("prefer", help="rank Pareto members under preference weights")
    p.add_argument("results")
    p.add_argument("--weights", required=True, help="six comma-separated reals summing to 1")
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_prefer)

    p = sub.add_parser("rediscover", help="search for weights selecting one Pareto member")
    p.add_argument("results")
    p.add_argument("config_id")
    p.set_defaults(func=cmd_rediscover)

    p = sub.add_parser("grf-sample", help="draw a Gaussian random field to CSV")
    p.add_argument("--n", type=int, default=31)
    p.add_argument("--seed", type=int, default=None, help=f"default ${SEED_ENV} or 0")
    p.add_argument("--mean", type=float, default=1.0)
    p.add_argument("--scale", type=float, default=0.3)
    p.add_argument("--length", type=float, default=0.1)
    p.add_argument("--floor", type=float, default=0.1)
    p.add_argument("--no-floor", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_grf_sample)

    p = sub.add_parser("mesh-info", help="print lattice and coarsening facts")
    p.add_argument("--n", type=int, default=31)
    p.add_argument("--levels", type=int, default=3)
    p.set_defaults(func=cmd_mesh_info)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
