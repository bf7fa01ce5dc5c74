"""Meta-solver construction and selection for reaction-diffusion benchmarks.

The package composes Krylov methods, stationary/Chebyshev smoothers and
coarse-basis hybrid preconditioners into a parameterized solver family, runs
them on a common finite-element benchmark, and selects among them with
Pareto and weighted-preference tools.
"""

__version__ = "0.1.0"
