"""Hybrid smoothing + coarse-correction preconditioners with 1-3 levels.

One application runs the sandwich

    z <- 0
    z <- pre smoothing sweeps toward A z = r
    e <- coarse solve of the restricted residual P^T (r - A z)
    z <- z + P e
    z <- post smoothing sweeps toward A z = r

where the coarse solve recurses into the next level's sandwich, except at the
deepest level where a stored dense factorization solves exactly.  A single
level degenerates to smoothing only; the map r -> z is linear and fixed for
the life of the preconditioner.

Setup assembles Galerkin operators ``A_{l+1} = P_l^T A_l P_l`` (charged
``m * nnz + m^2 * n`` MACs per level) and factorizes the deepest operator;
Chebyshev smoothing additionally estimates each level's spectrum by power
iteration.  Applications allocate only transient work vectors, so concurrent
applies on caller-owned vectors are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (
    ProlongationBasis,
    coarsen_chain,
    lattice_geometric_basis,
    load_basis,
    random_smoothed_qr_basis,
)
from .config import MetaSolverConfig, SmoothingStrategy, SolverOptions, parse_basis_tag
from .linalg import (
    CostCounter,
    DimensionError,
    LuFactorization,
    SparseMatrix,
    _sink,
    spmv,
)
from .smoothers import (
    PreparedRelaxation,
    SpectrumEstimate,
    chebyshev_iterate,
    estimate_spectrum,
    prepare_relaxation,
    run_sweeps,
)

SYMMETRIC_SMOOTHERS = ("jacobi", "ssor", "chebyshev")
# deterministic seed offsets for per-level randomized construction
_LEVEL_SEED_STRIDE = 1
_FALLBACK_COARSENING = 4


def galerkin(a: SparseMatrix, basis: ProlongationBasis, counter: CostCounter | None = None) -> SparseMatrix:
    """Coarse operator ``P^T A P`` through dense products, exact zeros dropped."""
    counter = _sink(counter)
    if basis.n_fine != a.nrows or a.nrows != a.ncols:
        raise DimensionError("galerkin: basis rows must match the square operator")
    n, m = basis.n_fine, basis.n_coarse
    ap = a._scipy @ basis.matrix
    counter.add_macs(m * a.nnz)
    coarse = basis.matrix.T @ ap
    counter.add_macs(m * m * n)
    result = SparseMatrix.from_dense(coarse)
    counter.alloc(result.owned_bytes)
    return result


@dataclass
class Level:
    """One smoothing level; ``basis`` is None only on a smoothing-only level."""

    a: SparseMatrix
    basis: ProlongationBasis | None
    relaxation: PreparedRelaxation | None
    spectrum: SpectrumEstimate | None


@dataclass
class HybridPreconditioner:
    """Immutable after build; ``apply`` is a fixed linear map."""

    smoother: str
    strategy: SmoothingStrategy
    levels: list[Level]
    coarse_a: SparseMatrix | None
    coarse_lu: LuFactorization | None
    owned_bytes: int = 0
    counter: CostCounter | None = None

    @property
    def n(self) -> int:
        return self.levels[0].a.nrows

    @property
    def n_levels(self) -> int:
        return len(self.levels) + (1 if self.coarse_lu is not None else 0)

    @property
    def is_symmetric(self) -> bool:
        """Symmetry of the map as an operator (trustworthy-CG requirement)."""
        return self.smoother in SYMMETRIC_SMOOTHERS and self.strategy.pre == self.strategy.post

    def apply(self, r: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
        return apply_hybrid(self, r, counter)

    def release(self) -> None:
        """Return the build's tracked allocations (coarse operators, any
        internally built bases, the factorization) to the counter."""
        if self.coarse_lu is not None:
            self.coarse_lu.release()
        if self.counter is not None and self.owned_bytes:
            self.counter.free(self.owned_bytes)
            self.owned_bytes = 0


def _smooth(level: Level, smoother: str, b: np.ndarray, x: np.ndarray, sweeps: int, counter: CostCounter) -> np.ndarray:
    if sweeps == 0:
        return x
    if smoother == "chebyshev":
        est = level.spectrum
        return chebyshev_iterate(level.a, b, x, est.lam_min, est.lam_max, sweeps, counter)
    return run_sweeps(level.relaxation, b, x, sweeps, counter)


def apply_hybrid(pc: HybridPreconditioner, r: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """Approximate ``A^-1 r`` by one sandwich cycle."""
    counter = _sink(counter)
    if r.shape != (pc.n,):
        raise DimensionError(f"apply_hybrid: expected length {pc.n}, got {r.shape}")
    return _cycle(pc, 0, r, counter)


def _cycle(pc: HybridPreconditioner, idx: int, r: np.ndarray, counter: CostCounter) -> np.ndarray:
    level = pc.levels[idx]
    pre, post = pc.strategy.pre, pc.strategy.post
    z = np.zeros_like(r)
    z = _smooth(level, pc.smoother, r, z, pre, counter)
    if level.basis is not None:
        if pre > 0:
            residual = r - spmv(level.a, z, counter)
        else:
            residual = r
        coarse_r = level.basis.apply_t(residual, counter)
        if idx + 1 < len(pc.levels):
            correction = _cycle(pc, idx + 1, coarse_r, counter)
        else:
            correction = pc.coarse_lu.solve(coarse_r, counter)
        z = z + level.basis.apply(correction, counter)
    z = _smooth(level, pc.smoother, r, z, post, counter)
    return z


def _plan_random_dims(n_fine: int, mesh_n: int | None, levels: int) -> list[int]:
    """Coarse dimensions for randomized bases: follow the geometric interior
    chain when the lattice coarsens cleanly, else shrink by a fixed factor."""
    if mesh_n is not None and (mesh_n - 2) * (mesh_n - 2) == n_fine:
        try:
            chain = coarsen_chain(mesh_n, levels)
            return [(side - 2) * (side - 2) for side in chain[1:]]
        except ValueError:
            pass
    dims = []
    current = n_fine
    for _ in range(levels - 1):
        current = max(current // _FALLBACK_COARSENING, 1)
        dims.append(current)
    return dims


def build_bases(
    a: SparseMatrix,
    config: MetaSolverConfig,
    mesh_n: int | None = None,
    counter: CostCounter | None = None,
) -> list[ProlongationBasis]:
    """Construct the prolongation chain for ``config.levels`` levels.

    Geometric bases need ``mesh_n`` (the fine lattice side) and coarsen along
    the nested chain.  Randomized bases smooth against the Galerkin operator
    of the previous level; a file basis covers the first transition and any
    deeper ones fall back to randomized construction on the coarse operator.
    """
    counter = _sink(counter)
    kind, params = parse_basis_tag(config.basis_kind)
    if config.levels == 1 or kind == "none":
        return []
    bases: list[ProlongationBasis] = []
    if kind == "geometric":
        if mesh_n is None:
            raise ValueError("geometric bases need the fine lattice size")
        chain = coarsen_chain(mesh_n, config.levels)
        expected = (mesh_n - 2) * (mesh_n - 2)
        if expected != a.nrows:
            raise DimensionError(
                f"operator dimension {a.nrows} is not the interior of a {mesh_n}-lattice"
            )
        for fine_side, coarse_side in zip(chain, chain[1:]):
            basis = lattice_geometric_basis(fine_side, coarse_side)
            counter.alloc(basis.owned_bytes)
            bases.append(basis)
        return bases

    operator = a
    dims = _plan_random_dims(a.nrows, mesh_n, config.levels)
    for depth in range(config.levels - 1):
        if kind == "file" and depth == 0:
            basis = load_basis(params["path"], expected_rows=operator.nrows)
            counter.alloc(basis.owned_bytes)
        else:
            seed = params.get("seed", 0) + depth * _LEVEL_SEED_STRIDE
            sweeps = params.get("sweeps", 3)
            target = dims[depth] if kind != "file" else max(operator.nrows // _FALLBACK_COARSENING, 1)
            basis = random_smoothed_qr_basis(operator, target, sweeps, seed, counter)
            counter.alloc(basis.owned_bytes)
        bases.append(basis)
        if depth + 1 < config.levels - 1:
            operator = galerkin(operator, basis, counter)
    return bases


def build_hybrid(
    a: SparseMatrix,
    config: MetaSolverConfig,
    options: SolverOptions = SolverOptions(),
    mesh_n: int | None = None,
    bases: list[ProlongationBasis] | None = None,
    counter: CostCounter | None = None,
    spectrum_seed: int = 0,
) -> HybridPreconditioner:
    """Assemble the level hierarchy on ``a`` and factorize the deepest operator.

    Passing ``bases`` reuses a previously built prolongation chain (Newton
    rebuilds do this so the coarse spaces stay fixed while the Galerkin
    operators and factorization track the new Jacobian).
    """
    counter = _sink(counter)
    if a.nrows != a.ncols:
        raise DimensionError("preconditioner requires a square operator")
    if config.levels == 1 and config.strategy.pre + config.strategy.post == 0:
        raise ValueError("a single level with strategy 0-1-0 is the zero map")
    owned = 0
    if bases is None:
        bases = build_bases(a, config, mesh_n=mesh_n, counter=counter)
        owned += sum(b.owned_bytes for b in bases)
    if config.levels >= 2 and len(bases) != config.levels - 1:
        raise DimensionError(f"need {config.levels - 1} bases, got {len(bases)}")

    operators = [a]
    for basis in bases:
        if basis.n_fine != operators[-1].nrows:
            raise DimensionError("basis chain does not match the operator chain")
        operators.append(galerkin(operators[-1], basis, counter))

    levels: list[Level] = []
    sandwich_ops = operators[:-1] if config.levels >= 2 else operators
    for idx, op in enumerate(sandwich_ops):
        relaxation = None
        spectrum = None
        if config.smoother == "chebyshev":
            spectrum = estimate_spectrum(
                op, counter, seed=spectrum_seed + idx, ratio=options.cheb_ratio
            )
        else:
            relaxation = prepare_relaxation(config.smoother, op, omega=options.omega)
        levels.append(Level(a=op, basis=bases[idx] if idx < len(bases) else None, relaxation=relaxation, spectrum=spectrum))

    coarse_a = operators[-1] if config.levels >= 2 else None
    coarse_lu = LuFactorization.from_sparse(coarse_a, counter) if coarse_a is not None else None
    owned += sum(op.owned_bytes for op in operators[1:])
    return HybridPreconditioner(
        smoother=config.smoother,
        strategy=config.strategy,
        levels=levels,
        coarse_a=coarse_a,
        coarse_lu=coarse_lu,
        owned_bytes=owned,
        counter=counter,
    )
