"""Constructive voxel codecs with certified reconstruction bounds, the
zero-variation graph solver, and the smoothing-decreases-variation checker.
"""

import dataclasses

import numpy as np

from . import graphsignal as gs
from . import pointcloud as pc
from .errors import DomainError, NumericalError

STRIDE_POLICIES = ("every_voxel", "every_other")

# Eight points tracing a 'Z' on a 4 x 4 grid, with a hand-built adjacency
# whose rows average each point's neighbors along the stroke.  Both
# coordinate signals are fixed points of the adjacency, so their graph
# total variation is exactly zero.
Z_GRID = np.array(
    [[0, 1, 1, 1], [0, 0, 1, 0], [0, 1, 0, 0], [1, 1, 1, 0]]
)
Z_X1 = np.array([1.0, 1.0, 1.0, 2.0, 3.0, 4.0, 4.0, 4.0])
Z_X2 = np.array([2.0, 3.0, 4.0, 3.0, 2.0, 1.0, 2.0, 3.0])
Z_ADJACENCY = np.array(
    [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.5],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ]
)


@dataclasses.dataclass
class VoxelCode:
    """Binary occupancy of a K^3 voxelization of the unit cube.

    occupancy is a flat length-K^3 array in (i, j, k) raster order with
    1-based voxel indices: flat = ((i-1)*K + (j-1))*K + (k-1).
    """

    k_res: int
    occupancy: np.ndarray
    stride: str = "every_voxel"

    def __post_init__(self):
        if self.k_res < 1:
            raise DomainError("voxel resolution must be >= 1")
        if self.stride not in STRIDE_POLICIES:
            raise DomainError(f"stride must be one of {STRIDE_POLICIES}")
        self.occupancy = np.asarray(self.occupancy)
        if self.occupancy.shape != (self.k_res ** 3,):
            raise DomainError(
                f"occupancy length {self.occupancy.shape} != K^3 = {self.k_res ** 3}"
            )
        if not np.isin(self.occupancy, (0, 1)).all():
            raise DomainError("occupancy entries must be 0 or 1")


def _flat_index(i, j, k, k_res):
    return ((i - 1) * k_res + (j - 1)) * k_res + (k - 1)


def _point_voxel(p, k_res):
    """1-based (i, j, k) of the voxel containing p; 1.0 lands in the last
    voxel along its axis."""
    idx = np.minimum(np.floor(p * k_res).astype(int), k_res - 1)
    return tuple(idx + 1)


def voxel_encode(s, k_res, stride="every_voxel"):
    if k_res < 1:
        raise DomainError("voxel resolution must be >= 1")
    pts = s.points
    bad = np.nonzero((pts < 0.0).any(axis=1) | (pts > 1.0).any(axis=1))[0]
    if bad.size:
        raise DomainError(
            f"point {bad[0]} at {pts[bad[0]].tolist()} lies outside [0, 1]^3"
        )
    occupancy = np.zeros(k_res ** 3, dtype=np.int64)
    for p in pts:
        i, j, k = _point_voxel(p, k_res)
        if stride == "every_other" and (i + j + k) % 2 != 0:
            continue
        occupancy[_flat_index(i, j, k, k_res)] = 1
    return VoxelCode(k_res, occupancy, stride)


def voxel_decode(code, proxy="center"):
    """One point per occupied voxel.

    The proxy point sits at the voxel center; "corner" places it at the
    high corner instead, which breaks the certified bound and exists only
    to demonstrate that failure.
    """
    if proxy not in ("center", "corner"):
        raise DomainError(f"unknown proxy placement {proxy!r}")
    k = code.k_res
    flat = np.nonzero(code.occupancy)[0]
    if flat.size == 0:
        raise DomainError("cannot decode an all-zero voxel code")
    i = flat // (k * k) + 1
    j = (flat // k) % k + 1
    kk = flat % k + 1
    ijk = np.column_stack([i, j, kk]).astype(np.float64)
    if proxy == "center":
        points = (ijk - 0.5) / k
    else:
        points = ijk / k
    return pc.PointCloud(points)


@dataclasses.dataclass
class Certificate:
    theorem: int
    k_res: int
    code_len: int
    distance: float
    bound: float
    passed: bool


def format_certificate(cert):
    verdict = "PASS" if cert.passed else "FAIL"
    return (
        f"theorem {cert.theorem} K {cert.k_res} C {cert.code_len} "
        f"distance {cert.distance:.17g} bound {cert.bound:.17g} {verdict}"
    )


def certify_thm1(s, code_len, corner_mode=False):
    """Voxel round trip with the bound sqrt(3)/(2 K) on augmented Chamfer
    distance, for code length C = K^3."""
    k_res = round(code_len ** (1.0 / 3.0))
    if k_res ** 3 != code_len:
        raise DomainError(f"code length {code_len} is not a perfect cube")
    code = voxel_encode(s, k_res)
    recon = voxel_decode(code, proxy="corner" if corner_mode else "center")
    distance, _ = pc.augmented_chamfer(s, recon)
    bound = np.sqrt(3.0) / (2.0 * k_res) + 1e-12
    return Certificate(1, k_res, code_len, distance, bound, distance <= bound)


_OFFSETS = [
    (di, dj, dk)
    for di in (0, 1)
    for dj in (0, 1)
    for dk in (0, 1)
    if (di, dj, dk) != (0, 0, 0)
]


def _occupancy_grid(code):
    k = code.k_res
    return code.occupancy.reshape(k, k, k)


def check_smoothness(code):
    """Sandwich condition: each voxel's occupancy lies between the min and
    max over its unit-offset neighbors (offsets leaving the grid clamp to
    the boundary cell).

    Returns None when satisfied, else the first violating 1-based (i, j, k).
    """
    k = code.k_res
    grid = _occupancy_grid(code)
    for i0 in range(k):
        for j0 in range(k):
            for k0 in range(k):
                vals = [
                    grid[min(i0 + di, k - 1), min(j0 + dj, k - 1), min(k0 + dk, k - 1)]
                    for di, dj, dk in _OFFSETS
                ]
                v = grid[i0, j0, k0]
                if not min(vals) <= v <= max(vals):
                    return (i0 + 1, j0 + 1, k0 + 1)
    return None


def _interpolate_every_other(stored, k):
    """Final voxel set: keep stored voxels and add any voxel with a stored
    neighbor at a {0,1}^3 offset."""
    grid = stored.reshape(k, k, k)
    out = grid.copy()
    for di, dj, dk in _OFFSETS:
        out[: k - di, : k - dj, : k - dk] |= grid[di:, dj:, dk:]
    return out.reshape(-1)


def certify_thm2(s, k_res):
    """Every-other-voxel codec with the tighter bound 1/K, valid only for
    occupancies satisfying the smoothness sandwich."""
    full = voxel_encode(s, k_res)
    violation = check_smoothness(full)
    if violation is not None:
        raise DomainError(
            f"occupancy violates the smoothness condition at voxel {violation}"
        )
    stored = voxel_encode(s, k_res, stride="every_other")
    final = _interpolate_every_other(stored.occupancy.astype(bool), k_res)
    recon = voxel_decode(VoxelCode(k_res, final.astype(np.int64)))
    distance, _ = pc.augmented_chamfer(s, recon)
    code_len = k_res ** 3 // 2
    bound = 1.0 / k_res + 1e-12
    return Certificate(2, k_res, code_len, distance, bound, distance <= bound)


def solve_zero_tv(x1, x2):
    """A graph adjacency fixing both signals: A x1 = x1, A x2 = x2, A != I.

    The minimum-norm row-wise solution is the orthogonal projector onto
    span{x1, x2}; a rank-one nullspace perturbation is added in the
    degenerate case where that projector is the identity.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim != 1 or x1.shape != x2.shape:
        raise DomainError("signals must be equal-length vectors")
    m = x1.shape[0]
    if m <= 2:
        raise DomainError(f"need signal length M > 2, got {m}")
    basis = np.column_stack([x1, x2])
    a = basis @ np.linalg.pinv(basis)
    if np.linalg.norm(a - np.eye(m)) <= 1e-8:
        q = x1 if np.linalg.norm(x1) > 0 else np.eye(m)[:, 0]
        w = _orthogonal_unit(basis, m)
        a = a + 1e-3 * np.outer(q, w)
    adjacency = gs.GraphAdjacency(a)
    for name, x in (("x1", x1), ("x2", x2)):
        residual = np.linalg.norm(a @ x - x)
        if residual >= 1e-10:
            raise NumericalError(f"fixed-point residual {residual:.3e} on {name}")
        tv = gs.graph_tv(adjacency, x)
        if tv >= 1e-9:
            raise NumericalError(f"graph variation {tv:.3e} on {name} is not zero")
    return adjacency


def _orthogonal_unit(basis, m):
    """A unit vector orthogonal to the columns of basis."""
    q, _ = np.linalg.qr(basis)
    for idx in range(m):
        w = np.eye(m)[:, idx] - q @ (q.T @ np.eye(m)[:, idx])
        nrm = np.linalg.norm(w)
        if nrm > 1e-8:
            return w / nrm
    raise NumericalError("no direction orthogonal to the signal span")


@dataclasses.dataclass
class TvDecreaseReport:
    trials: int
    violations: int
    worst_margin: float       # max over trials of tv(after) - tv(before)
    qv_violations: int        # quadratic-variation analogue
    worst_qv_margin: float


def check_tv_decrease(a, trials, seed=0):
    """One-hop smoothing never increases graph total variation.

    For each random signal x, checks graph_tv(A, h x) <= graph_tv(A, x)
    with h = (I + A)/2, and the quadratic-variation analogue
    (h x)^T L (h x) <= x^T L x.
    """
    radius = gs.spectral_radius(a.weights)
    if radius > 1.0 + 1e-9:
        raise DomainError(
            f"spectral radius {radius:.12g} exceeds the filter hypothesis |lambda| <= 1"
        )
    rng = np.random.default_rng(seed)
    lap = gs.laplacian(a)
    violations = 0
    qv_violations = 0
    worst = -np.inf
    worst_qv = -np.inf
    for _ in range(trials):
        x = rng.standard_normal(a.size)
        y = gs.haar_filter(a, x[:, None])[:, 0]
        margin = gs.graph_tv(a, y) - gs.graph_tv(a, x)
        worst = max(worst, margin)
        if margin > 1e-10:
            violations += 1
        qv_margin = gs.quadratic_variation(lap, y) - gs.quadratic_variation(lap, x)
        worst_qv = max(worst_qv, qv_margin)
        if qv_margin > 1e-10:
            qv_violations += 1
    return TvDecreaseReport(trials, violations, worst, qv_violations, worst_qv)
