"""Meta-solver configuration: one point of the five-axis solver family.

A configuration picks a coarse-basis provider, a Krylov method, a relaxation
smoother, a smoothing strategy and a level count; the time scheme rides along
as run metadata.  Numerical knobs that are shared across a whole sweep
(tolerances, restart length, relaxation omega, Chebyshev ratio) live in
:class:`SolverOptions` instead of the per-configuration axes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

KRYLOV_KINDS = ("cg", "fgmres", "bicgstab")
SMOOTHER_KINDS = ("jacobi", "gauss_seidel", "sor", "ssor", "chebyshev")
SCHEME_KINDS = ("imex", "newton")
BASIS_KIND_PREFIXES = ("geometric", "random_qr", "file", "none")
PAPER_STRATEGIES = ("1-1-1", "3-1-3", "5-1-5", "7-1-7", "9-1-9")


@dataclass(frozen=True)
class SmoothingStrategy:
    """Pre/post smoothing counts around one coarse correction ("s-1-s")."""

    pre: int
    post: int

    def __post_init__(self) -> None:
        if self.pre < 0 or self.post < 0:
            raise ValueError("smoothing counts must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "SmoothingStrategy":
        parts = text.strip().split("-")
        if len(parts) != 3 or parts[1] != "1":
            raise ValueError(f"strategy must look like 's-1-s', got {text!r}")
        try:
            pre, post = int(parts[0]), int(parts[2])
        except ValueError:
            raise ValueError(f"strategy must look like 's-1-s', got {text!r}") from None
        return cls(pre, post)

    def __str__(self) -> str:
        return f"{self.pre}-1-{self.post}"


def parse_basis_tag(tag: str) -> tuple[str, dict]:
    """Split a basis tag into (provider, params).

    Forms: ``geometric``, ``none``, ``file:<path>``, and
    ``random_qr:sweeps=<int>:seed=<int>`` where both params are optional.
    """
    if tag == "geometric" or tag == "none":
        return tag, {}
    if tag.startswith("file:"):
        path = tag.split(":", 1)[1]
        if not path:
            raise ValueError("file basis tag needs a path")
        return "file", {"path": path}
    if tag == "random_qr" or tag.startswith("random_qr:"):
        params = {"sweeps": 3, "seed": 0}
        for part in tag.split(":")[1:]:
            key, _, value = part.partition("=")
            if key not in params or not value:
                raise ValueError(f"bad random_qr parameter {part!r} in {tag!r}")
            params[key] = int(value)
        if params["sweeps"] < 0:
            raise ValueError("random_qr sweeps must be nonnegative")
        return "random_qr", params
    raise ValueError(f"unknown basis tag {tag!r}")


@dataclass(frozen=True)
class MetaSolverConfig:
    """One meta-solver: a value per axis plus the time scheme."""

    basis_kind: str
    krylov: str
    smoother: str
    strategy: SmoothingStrategy
    levels: int
    scheme: str = "imex"

    def __post_init__(self) -> None:
        parse_basis_tag(self.basis_kind)
        if self.krylov not in KRYLOV_KINDS:
            raise ValueError(f"krylov must be one of {KRYLOV_KINDS}, got {self.krylov!r}")
        if self.smoother not in SMOOTHER_KINDS:
            raise ValueError(f"smoother must be one of {SMOOTHER_KINDS}, got {self.smoother!r}")
        if self.levels not in (1, 2, 3):
            raise ValueError(f"levels must be 1, 2 or 3, got {self.levels}")
        if self.scheme not in SCHEME_KINDS:
            raise ValueError(f"scheme must be one of {SCHEME_KINDS}, got {self.scheme!r}")
        if not isinstance(self.strategy, SmoothingStrategy):
            raise TypeError("strategy must be a SmoothingStrategy")

    @property
    def preconditioned(self) -> bool:
        """False only for the vanilla (no-preconditioner) basis tag."""
        return self.basis_kind != "none"

    def with_scheme(self, scheme: str) -> "MetaSolverConfig":
        return replace(self, scheme=scheme)


@dataclass(frozen=True)
class SolverOptions:
    """Sweep-wide numerical knobs, fixed across the configuration grid."""

    tol: float = 1e-12
    maxit: int = 100000
    restart: int = 50
    omega: float = 1.5
    cheb_ratio: float = 30.0
    newton_tol: float = 1e-10
    newton_maxit: int = 25

    def __post_init__(self) -> None:
        if self.tol <= 0 or self.newton_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.maxit < 1 or self.restart < 1 or self.newton_maxit < 1:
            raise ValueError("iteration limits must be at least 1")
        if not 0.0 < self.omega < 2.0:
            raise ValueError("omega must lie in (0, 2)")
        if self.cheb_ratio <= 1.0:
            raise ValueError("cheb_ratio must exceed 1")
