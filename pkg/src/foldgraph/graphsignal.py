"""Canonical 2D lattice, graph construction, graph filters, and smoothness
metrics (graph total variation and directional total variation)."""

import dataclasses

import numpy as np

from ._linalg import solve_spd
from .errors import DimensionError, DomainError, NumericalError


@dataclasses.dataclass
class Lattice2D:
    """side^2 nodes uniformly spaced over the unit square, row-major."""

    nodes: np.ndarray  # (M, 2)
    side: int


def make_lattice(side):
    if side < 2:
        raise DomainError("lattice side must be at least 2")
    coords = np.linspace(0.0, 1.0, side)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    return Lattice2D(nodes, side)


@dataclasses.dataclass
class GraphAdjacency:
    """M x M nonnegative edge weights."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"adjacency must be square, got {w.shape}")

    @property
    def size(self):
        return self.weights.shape[0]


@dataclasses.dataclass
class LaplacianSpectrum:
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # column i pairs with eigenvalue i


@dataclasses.dataclass
class LatticeSignal:
    """N x N binary occupancy grid."""

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2:
            raise DimensionError(f"lattice signal must be 2D, got {self.grid.shape}")
        if not np.isin(self.grid, (0, 1)).all():
            raise DomainError("lattice signal entries must be 0 or 1")


def build_initial_adjacency(lat, k, sigma):
    """Row-normalized Gaussian weights over each node's k nearest lattice
    neighbors (self excluded, equidistant ties broken by lowest index)."""
    m = lat.nodes.shape[0]
    if not 1 <= k < m:
        raise DomainError(f"need 1 <= k < M, got k={k}, M={m}")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    d2 = ((lat.nodes[:, None, :] - lat.nodes[None, :, :]) ** 2).sum(axis=2)
    weights = np.zeros((m, m))
    for i in range(m):
        order = np.argsort(d2[i], kind="stable")
        neighbors = order[order != i][:k]
        w = np.exp(-d2[i, neighbors] / (2.0 * sigma * sigma))
        weights[i, neighbors] = w / w.sum()
    return GraphAdjacency(weights)


def symmetrize(a):
    w = a.weights
    return GraphAdjacency(0.5 * (w + w.T))


def _check_filter_shapes(a, x):
    if x.ndim != 2 or x.shape[0] != a.size:
        raise DimensionError(
            f"signal rows {x.shape} do not match graph size {a.size}"
        )


def haar_filter(a, x):
    """One-hop low-pass smoothing: (I + A) x / 2."""
    x = np.asarray(x, dtype=np.float64)
    _check_filter_shapes(a, x)
    return 0.5 * x + 0.5 * (a.weights @ x)


def alpha_filter_adjacency(a, x, alpha):
    """((1 - alpha) I + alpha A) x; alpha = 0.5 is the Haar filter."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    _check_filter_shapes(a, x)
    return (1.0 - alpha) * x + alpha * (a.weights @ x)


def laplacian(a):
    """Graph Laplacian diag(A~ 1) - A~ of the symmetrized adjacency."""
    sym = 0.5 * (a.weights + a.weights.T)
    return np.diag(sym.sum(axis=1)) - sym


def laplacian_filter(a, x, mu):
    """(mu I + L)^{-1} x via an SPD solve; no explicit inverse."""
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    x = np.asarray(x, dtype=np.float64)
    _check_filter_shapes(a, x)
    lap = laplacian(a)
    return solve_spd(lap + mu * np.eye(a.size), x)


def alpha_filter_laplacian(a, x, mu, alpha):
    """(mu I + L)^{-2 alpha} x, computed spectrally."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    x = np.asarray(x, dtype=np.float64)
    _check_filter_shapes(a, x)
    spec = eig_symmetric(laplacian(a))
    gains = (mu + spec.eigenvalues) ** (-2.0 * alpha)
    v = spec.eigenvectors
    return v @ (gains[:, None] * (v.T @ x))


def eig_symmetric(m, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps until the off-diagonal Frobenius norm drops below tol * |m|_F,
    returning ascending eigenvalues with paired eigenvector columns.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got {m.shape}")
    defect = np.max(np.abs(m - m.T)) if m.size else 0.0
    if defect > 1e-8:
        raise DomainError(f"matrix not symmetric: defect {defect:.3e}")
    n = m.shape[0]
    a = 0.5 * (m + m.T)
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0 or n == 1:
        return LaplacianSpectrum(np.diag(a).copy(), v)
    # Rotating away every entry above skip keeps the off-diagonal Frobenius
    # norm below tol * norm once a full sweep makes no rotation.
    skip = tol * norm / n
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            row = a[p, p + 1:]
            for q in (np.nonzero(np.abs(row) > skip)[0] + p + 1):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        raise NumericalError(
            f"Jacobi iteration did not converge: residual {off:.3e}"
        )
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals, kind="stable")
    return LaplacianSpectrum(eigvals[order], v[:, order])


def spectral_radius(a, iterations=1000, rtol=1e-12):
    """|lambda_max| by power iteration from a fixed seeded start vector."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    n = a.shape[0]
    if not a.any():
        return 0.0
    rng = np.random.default_rng(20240801)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iterations):
        w = a @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        if abs(nrm - estimate) <= rtol * max(nrm, 1.0):
            return float(nrm)
        estimate = nrm
        v = w / nrm
    return float(estimate)


def graph_tv(a, x):
    """|x - A x / |lambda_max||_2^2; |x|_2^2 when the radius is zero."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (a.size,):
        raise DimensionError(f"signal length {x.shape} does not match {a.size}")
    radius = spectral_radius(a.weights)
    if radius == 0.0:
        return float(x @ x)
    d = x - (a.weights @ x) / radius
    return float(d @ d)


def quadratic_variation(lap, x):
    """x^T L x for a symmetric Laplacian."""
    lap = np.asarray(lap, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    defect = np.max(np.abs(lap - lap.T)) if lap.size else 0.0
    if defect > 1e-8:
        raise DomainError(f"Laplacian not symmetric: defect {defect:.3e}")
    return float(x @ (lap @ x))


_DELTAS = [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def dtv_at(sig, i, j):
    """Per-node directional variation term at grid position (i, j)."""
    grid = sig.grid
    n_rows, n_cols = grid.shape

    def at(r, c):
        if 0 <= r < n_rows and 0 <= c < n_cols:
            return int(grid[r, c])
        return 0

    if at(i, j) == 0:
        return 0.0
    diag_sum = sum(at(i + di, j + dj) for di, dj in _DELTAS)
    isolated = 1.0 if diag_sum == 0 else 0.0
    discontinuity = sum(
        abs(at(i + di, j + dj) - at(i - di, j - dj)) for di, dj in _DELTAS
    )
    return isolated + discontinuity


def dtv(sig):
    """Directional total variation of a binary occupancy grid."""
    n_rows, n_cols = sig.grid.shape
    return float(
        sum(dtv_at(sig, i, j) for i in range(n_rows) for j in range(n_cols))
    )


def equivalence_check(sig, x1, x2):
    """True iff the coordinate pair (x1, x2) marks exactly the occupied
    cells of the grid (1-based, after ceiling)."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape or x1.ndim != 1:
        raise DimensionError("signals must be equal-length vectors")
    grid = sig.grid
    n = grid.shape[0]
    if int(grid.sum()) != x1.shape[0]:
        return False
    for a, b in zip(x1, x2):
        i = int(np.ceil(a))
        j = int(np.ceil(b))
        if not (1 <= i <= n and 1 <= j <= n):
            return False
        if grid[i - 1, j - 1] != 1:
            return False
    return True


def export_spectrum(path, spectrum):
    """One ascending eigenvalue per line."""
    with open(path, "w", newline="\n") as fh:
        for lam in spectrum.eigenvalues:
            fh.write(f"{lam:.17g}\n")
