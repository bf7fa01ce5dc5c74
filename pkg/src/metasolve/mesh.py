"""Structured triangular meshes on the unit square, P1 assembly, GRF fields.

Nodes live on an ``n x n`` lattice with spacing ``h = 1/(n-1)`` and id
``iy * n + ix``.  Each cell splits into two triangles along its lower-left to
upper-right diagonal.  All domain boundary nodes carry homogeneous Dirichlet
conditions, eliminated symmetrically so the interior operator stays SPD.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .linalg import CostCounter, DimensionError, NumericalError, SparseMatrix

_GRF_NODE_LIMIT = 5000
_GRF_NUGGET = 1e-10


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform lattice triangulation of [0, 1]^2 with n nodes per side."""

    n: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def n_nodes(self) -> int:
        return self.n * self.n

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]


def build_mesh(n: int) -> StructuredMesh:
    """Triangulate the unit square with ``n`` nodes per side (n >= 2)."""
    if n < 2:
        raise ValueError("mesh needs at least 2 nodes per side")
    coords = np.linspace(0.0, 1.0, n)
    xs, ys = np.meshgrid(coords, coords, indexing="xy")
    nodes = np.column_stack([xs.ravel(), ys.ravel()])

    cell = np.arange(n - 1)
    ix, iy = np.meshgrid(cell, cell, indexing="xy")
    ll = (iy * n + ix).ravel()
    lr, ul = ll + 1, ll + n
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.vstack([lower, upper]).astype(np.int64)

    on_edge = np.zeros((n, n), dtype=bool)
    on_edge[0, :] = on_edge[-1, :] = True
    on_edge[:, 0] = on_edge[:, -1] = True
    return StructuredMesh(n, nodes, triangles, on_edge.ravel())


@dataclass
class ScalarField:
    """Nodal values over a mesh."""

    mesh: StructuredMesh
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.mesh.n_nodes,):
            raise DimensionError("field length must equal the node count")

    @classmethod
    def constant(cls, mesh: StructuredMesh, value: float) -> "ScalarField":
        return cls(mesh, np.full(mesh.n_nodes, float(value)))

    @classmethod
    def from_function(cls, mesh: StructuredMesh, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarField":
        return cls(mesh, np.asarray(fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=np.float64))

    def to_csv(self, path: str | Path) -> None:
        rows = ["x,y,value"]
        for (x, y), v in zip(self.mesh.nodes, self.values):
            rows.append(f"{float(x)!r},{float(y)!r},{float(v)!r}")
        Path(path).write_text("\n".join(rows) + "\n")


@dataclass(frozen=True)
class GrfSpec:
    """Squared-exponential Gaussian random field law on mesh nodes."""

    mean: float
    variance_scale: float
    corr_len: float
    floor: float | None
    seed: int

    def __post_init__(self) -> None:
        if self.variance_scale < 0:
            raise ValueError("variance_scale must be nonnegative")
        if self.corr_len <= 0:
            raise ValueError("corr_len must be positive")


def grf_sample(spec: GrfSpec, mesh: StructuredMesh, counter: CostCounter | None = None) -> ScalarField:
    """Draw one field from the law: mean + L xi with K = L L^T.

    The covariance is ``variance_scale * exp(-r^2 / (2 corr_len^2))`` plus a
    ``1e-10 * variance_scale`` diagonal nugget before the Cholesky
    factorization.  Sampling is bit-reproducible for a fixed spec and charges
    nothing; it happens before the measured solve path.
    """
    n = mesh.n_nodes
    if n > _GRF_NODE_LIMIT:
        raise ValueError(f"GRF sampling is limited to {_GRF_NODE_LIMIT} nodes, got {n}")
    if spec.variance_scale == 0.0:
        values = np.full(n, spec.mean)
    else:
        diff = mesh.nodes[:, None, :] - mesh.nodes[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        cov = spec.variance_scale * np.exp(-sq / (2.0 * spec.corr_len**2))
        cov[np.diag_indices(n)] += _GRF_NUGGET * spec.variance_scale
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance factorization failed despite nugget: {exc}") from None
        rng = np.random.default_rng(spec.seed)
        values = spec.mean + chol @ rng.standard_normal(n)
    if spec.floor is not None:
        values = np.maximum(values, spec.floor)
    return ScalarField(mesh, values)


@dataclass
class AssembledSystem:
    """Stiffness/mass pair with boundary rows and columns eliminated.

    ``a_ii``/``m_ii`` act on interior unknowns; ``m_if`` and ``a_if`` keep the
    interior-rows-times-all-columns blocks needed to fold nodal forcing data
    (and, in general, boundary data) into interior right-hand sides.
    """

    mesh: StructuredMesh
    a_full: SparseMatrix
    m_full: SparseMatrix
    a_ii: SparseMatrix
    m_ii: SparseMatrix
    a_if: SparseMatrix
    m_if: SparseMatrix

    @property
    def interior(self) -> np.ndarray:
        return self.mesh.interior

    @property
    def n_interior(self) -> int:
        return self.mesh.n_interior

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return full[self.mesh.interior]

    def embed(self, interior_values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        full = np.full(self.mesh.n_nodes, fill)
        full[self.mesh.interior] = interior_values
        return full

    @cached_property
    def lumped_mass_interior(self) -> np.ndarray:
        """Row sums of the consistent mass over interior rows."""
        return np.asarray(self.m_full._scipy.sum(axis=1)).ravel()[self.mesh.interior]

    def owned_bytes(self) -> int:
        blocks = (self.a_full, self.m_full, self.a_ii, self.m_ii, self.a_if, self.m_if)
        return sum(b.owned_bytes for b in blocks)


def assemble(
    mesh: StructuredMesh,
    k_field: ScalarField,
    reaction_scale: float = 0.0,
    counter: CostCounter | None = None,
) -> AssembledSystem:
    """Assemble P1 stiffness and consistent mass for ``-div(k grad u)``.

    ``k`` is taken elementwise as the mean of the triangle's vertex values.
    A nonzero ``reaction_scale`` r folds a linear reaction term r*u into the
    operator as ``A - r * M``; the default leaves the pure diffusion matrix,
    which is SPD whenever k > 0.  Assembly charges owned bytes to ``counter``
    but no MACs (it sits outside the measured solve path).
    """
    if k_field.mesh is not mesh and k_field.values.shape != (mesh.n_nodes,):
        raise DimensionError("conductivity field does not match the mesh")
    if not np.all(np.isfinite(k_field.values)):
        raise ValueError("conductivity values must be finite")

    tri = mesh.triangles
    pts = mesh.nodes[tri]  # (nt, 3, 2)
    d1 = pts[:, 1] - pts[:, 0]
    d2 = pts[:, 2] - pts[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    # b_a = y_b - y_c, c_a = x_c - x_b for cyclic local ordering (a, b, c)
    ys = pts[:, :, 1]
    xs = pts[:, :, 0]
    nxt = [1, 2, 0]
    prv = [2, 0, 1]
    b = ys[:, nxt] - ys[:, prv]
    c = xs[:, prv] - xs[:, nxt]
    k_tri = k_field.values[tri].mean(axis=1)

    scale_k = k_tri / (4.0 * area)
    ke = scale_k[:, None, None] * (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
    me = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    nn = mesh.n_nodes
    a_full = SparseMatrix.from_coo(nn, nn, rows, cols, ke.ravel())
    m_full = SparseMatrix.from_coo(nn, nn, rows, cols, me.ravel())
    if reaction_scale != 0.0:
        a_full = SparseMatrix.from_scipy(a_full._scipy - reaction_scale * m_full._scipy)

    interior = mesh.interior
    everything = np.arange(nn)
    system = AssembledSystem(
        mesh=mesh,
        a_full=a_full,
        m_full=m_full,
        a_ii=a_full.submatrix(interior, interior),
        m_ii=m_full.submatrix(interior, interior),
        a_if=a_full.submatrix(interior, everything),
        m_if=m_full.submatrix(interior, everything),
    )
    if counter is not None:
        counter.alloc(system.owned_bytes())
    return system
