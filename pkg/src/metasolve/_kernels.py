"""Jitted CSR triangular substitution kernels.

Both kernels read the full CSR arrays of a square matrix and use only the
relevant triangle, so relaxation sweeps never materialize split matrices.
``diag_scale`` multiplies the diagonal and ``offdiag_scale`` the strict
triangle, which covers Gauss-Seidel (1, 1), SOR (1/omega, 1) and the SSOR
half sweeps (1, omega) with a single code path.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def forward_substitute(indptr, indices, data, rhs, diag_scale, offdiag_scale):
    n = rhs.shape[0]
    x = np.empty(n)
    for i in range(n):
        acc = rhs[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j < i:
                acc -= offdiag_scale * data[k] * x[j]
            elif j == i:
                diag = data[k]
        x[i] = acc / (diag_scale * diag)
    return x


@numba.njit(cache=True)
def backward_substitute(indptr, indices, data, rhs, diag_scale, offdiag_scale):
    n = rhs.shape[0]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = rhs[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j > i:
                acc -= offdiag_scale * data[k] * x[j]
            elif j == i:
                diag = data[k]
        x[i] = acc / (diag_scale * diag)
    return x
