"""Dense helpers shared by the autodiff engine and the graph filters."""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError


def cholesky_lower(a):
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix.

    Raises NumericalError naming the failing pivot when the matrix is not
    positive definite.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not np.isfinite(d) or d <= 0.0:
            raise NumericalError(
                f"matrix is not positive definite: pivot {j} = {d:.6e}"
            )
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_cholesky(L, b):
    """Solve (L L^T) y = b given the lower Cholesky factor L."""
    z = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, z, lower=False)


def solve_spd(a, b):
    """Solve a y = b for symmetric positive definite a."""
    return solve_cholesky(cholesky_lower(a), b)
