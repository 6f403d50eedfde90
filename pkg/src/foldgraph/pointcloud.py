"""Point-cloud container, Chamfer distances, synthetic shapes, and file IO."""

import dataclasses

import numpy as np

from . import autodiff as ad
from .errors import DomainError, FileFormatError


@dataclasses.dataclass
class PointCloud:
    """N x 3 coordinates plus an optional per-point scalar channel."""

    points: np.ndarray
    scalar: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise DomainError(f"points must be N x 3, got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise DomainError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise DomainError("point coordinates must be finite")
        if self.scalar is not None:
            self.scalar = np.asarray(self.scalar, dtype=np.float64)
            if self.scalar.shape != (self.points.shape[0],):
                raise DomainError(
                    f"scalar channel must be length {self.points.shape[0]}"
                )

    def __len__(self):
        return self.points.shape[0]


@dataclasses.dataclass
class MatchResult:
    """Nearest-neighbor matchings behind a Chamfer evaluation."""

    forward_idx: np.ndarray   # per source point, index of nearest reconstruction
    backward_idx: np.ndarray  # per reconstruction point, index of nearest source
    d_forward: float          # mean of forward min distances
    d_backward: float         # mean of backward min distances


def _pairwise_distances(s, r):
    # Direct difference form, not the |s|^2 + |r|^2 - 2 s.r expansion: it
    # cannot go negative under rounding and matches a per-pair computation
    # bit for bit.
    diff = s[:, None, :] - r[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def _match(s_pts, r_pts):
    d = _pairwise_distances(s_pts, r_pts)
    fwd = np.argmin(d, axis=1)
    bwd = np.argmin(d, axis=0)
    d_f = float(d[np.arange(len(s_pts)), fwd].mean())
    d_b = float(d[bwd, np.arange(len(r_pts))].mean())
    return MatchResult(fwd, bwd, d_f, d_b)


def augmented_chamfer(s, r):
    """max of the two directional mean nearest-neighbor distances.

    Returns the distance and the matching that produced it.
    """
    match = _match(s.points, r.points)
    return max(match.d_forward, match.d_backward), match


def chamfer_plain(s, r):
    """Sum of the two directional mean nearest-neighbor distances."""
    match = _match(s.points, r.points)
    return match.d_forward + match.d_backward


def chamfer_loss(r, s_points, kind="augmented"):
    """Differentiable Chamfer loss between a reconstruction tensor and a
    fixed source cloud.

    The nearest-neighbor matching is frozen at the forward values and the
    subgradient flows through it; for the augmented form only the larger
    directional term propagates gradient, both (averaged) on an exact tie.
    """
    if kind not in ("augmented", "plain"):
        raise DomainError(f"unknown chamfer kind: {kind!r}")
    s_pts = np.asarray(s_points, dtype=np.float64)
    r_pts = r.values
    if s_pts.shape[0] < 1 or r_pts.shape[0] < 1:
        raise DomainError("chamfer loss needs non-empty clouds")
    match = _match(s_pts, r_pts)
    n, m = s_pts.shape[0], r_pts.shape[0]

    def _grad_forward():
        # (1/N) sum_i |s_i - r_{f(i)}|, derivative w.r.t. matched r rows.
        g = np.zeros_like(r_pts)
        diff = r_pts[match.forward_idx] - s_pts
        dist = np.linalg.norm(diff, axis=1)
        ok = dist > 0.0
        contrib = np.zeros_like(diff)
        contrib[ok] = diff[ok] / dist[ok, None] / n
        np.add.at(g, match.forward_idx, contrib)
        return g

    def _grad_backward():
        diff = r_pts - s_pts[match.backward_idx]
        dist = np.linalg.norm(diff, axis=1)
        g = np.zeros_like(r_pts)
        ok = dist > 0.0
        g[ok] = diff[ok] / dist[ok, None] / m
        return g

    if kind == "plain":
        value = match.d_forward + match.d_backward
        grads = [_grad_forward, _grad_backward]
    elif match.d_forward > match.d_backward:
        value = match.d_forward
        grads = [_grad_forward]
    elif match.d_backward > match.d_forward:
        value = match.d_backward
        grads = [_grad_backward]
    else:
        value = match.d_forward
        grads = None  # tie: average both branches

    out = ad.Tensor(np.asarray(value), parents=(r,))

    def _bw(g):
        g = float(g)
        if grads is None:
            r.accumulate(g * 0.5 * (_grad_forward() + _grad_backward()))
        else:
            total = np.zeros_like(r_pts)
            for fn in grads:
                total += fn()
            r.accumulate(g * total)

    out._backward_fn = _bw
    return out


def normalize_unit_cube(s):
    """Uniformly scale and translate the cloud into [0, 1]^3.

    The aspect ratio is preserved; axes with zero overall extent land at 0.5.
    """
    lo = s.points.min(axis=0)
    hi = s.points.max(axis=0)
    extent = hi - lo
    max_extent = float(extent.max())
    scl = 1.0 / max_extent if max_extent > 0.0 else 1.0
    offset = (1.0 - extent * scl) / 2.0
    pts = (s.points - lo) * scl + offset
    return PointCloud(pts, None if s.scalar is None else s.scalar.copy())


_SHAPES = ("sphere", "torus", "cube_surface", "plane", "z_curve")


def sample_synthetic(shape, n, params=None, seed=0):
    """Sample n points on a named synthetic surface, deterministically."""
    if n < 1:
        raise DomainError("need at least one point")
    if shape not in _SHAPES:
        raise DomainError(f"unknown shape {shape!r}, expected one of {_SHAPES}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if shape == "sphere":
        radius = float(params.pop("radius", 1.0))
        if radius <= 0:
            raise DomainError("sphere radius must be positive")
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = radius * v
    elif shape == "torus":
        big = float(params.pop("R", 1.0))
        small = float(params.pop("r", 0.3))
        if small <= 0 or big <= 0:
            raise DomainError("torus radii must be positive")
        if small >= big:
            raise DomainError(
                f"torus minor radius {small} must be smaller than major {big}"
            )
        u = rng.uniform(0.0, 2.0 * np.pi, n)
        v = rng.uniform(0.0, 2.0 * np.pi, n)
        pts = np.stack(
            [
                (big + small * np.cos(v)) * np.cos(u),
                (big + small * np.cos(v)) * np.sin(u),
                small * np.sin(v),
            ],
            axis=1,
        )
    elif shape == "cube_surface":
        side = float(params.pop("side", 1.0))
        if side <= 0:
            raise DomainError("cube side must be positive")
        face = rng.integers(0, 6, n)
        uv = rng.uniform(0.0, 1.0, (n, 2))
        pts = np.empty((n, 3))
        axis = face // 2
        level = (face % 2).astype(np.float64)
        for i in range(n):
            coords = [uv[i, 0], uv[i, 1]]
            coords.insert(axis[i], level[i])
            pts[i] = coords
        pts *= side
    elif shape == "plane":
        side = float(params.pop("side", 1.0))
        uv = rng.uniform(0.0, side, (n, 2))
        pts = np.column_stack([uv, np.zeros(n)])
    else:  # z_curve: top bar, diagonal, bottom bar of a 'Z' in the z=0 plane
        segments = np.array(
            [[[0.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]
        )
        lengths = np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1)
        cum = np.cumsum(lengths)
        t = rng.uniform(0.0, cum[-1], n)
        pts = np.empty((n, 3))
        for i, ti in enumerate(t):
            k = int(np.searchsorted(cum, ti))
            t0 = ti - (cum[k - 1] if k > 0 else 0.0)
            frac = t0 / lengths[k]
            xy = segments[k, 0] + frac * (segments[k, 1] - segments[k, 0])
            pts[i] = [xy[0], xy[1], 0.0]
    if params:
        raise DomainError(f"unknown parameters for {shape}: {sorted(params)}")
    return PointCloud(pts)


# ---------------------------------------------------------------------------
# file formats


def _fmt(x):
    return f"{x:.17g}"


def write_xyz(path, cloud):
    with open(path, "w", newline="\n") as fh:
        for p in cloud.points:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def read_xyz(path):
    pts = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.split()
            if len(tokens) != 3:
                raise FileFormatError(
                    f"expected 3 coordinates, got {len(tokens)}", line=lineno
                )
            try:
                pts.append([float(t) for t in tokens])
            except ValueError:
                raise FileFormatError(
                    f"non-numeric token in {text!r}", line=lineno
                ) from None
    if not pts:
        raise FileFormatError("no points in file")
    return PointCloud(np.array(pts))


def write_ply_ascii(path, cloud):
    has_scalar = cloud.scalar is not None
    with open(path, "w", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if has_scalar:
            fh.write("property double scalar\n")
        fh.write("end_header\n")
        for i, p in enumerate(cloud.points):
            row = [_fmt(p[0]), _fmt(p[1]), _fmt(p[2])]
            if has_scalar:
                row.append(_fmt(cloud.scalar[i]))
            fh.write(" ".join(row) + "\n")


def read_ply_ascii(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FileFormatError("missing 'ply' magic", line=1)
    n_vertex = None
    properties = []
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        text = line.strip()
        if text == "end_header":
            body_start = lineno
            break
        if text.startswith("format"):
            if text != "format ascii 1.0":
                raise FileFormatError(f"unsupported format {text!r}", line=lineno)
        elif text.startswith("element"):
            parts = text.split()
            if len(parts) != 3 or parts[1] != "vertex":
                raise FileFormatError(f"unsupported element {text!r}", line=lineno)
            n_vertex = int(parts[2])
        elif text.startswith("property"):
            parts = text.split()
            if len(parts) != 3:
                raise FileFormatError(f"bad property line {text!r}", line=lineno)
            properties.append(parts[2])
        elif text.startswith("comment") or not text:
            continue
        else:
            raise FileFormatError(f"unrecognized header line {text!r}", line=lineno)
    if body_start is None:
        raise FileFormatError("missing end_header")
    if n_vertex is None:
        raise FileFormatError("missing vertex element")
    expected = ["x", "y", "z"]
    has_scalar = properties == expected + ["scalar"]
    if not has_scalar and properties != expected:
        raise FileFormatError(f"unsupported vertex properties {properties}")
    rows = []
    for off, line in enumerate(lines[body_start:body_start + n_vertex]):
        lineno = body_start + 1 + off
        tokens = line.split()
        if len(tokens) != len(properties):
            raise FileFormatError(
                f"expected {len(properties)} values, got {len(tokens)}", line=lineno
            )
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise FileFormatError(
                f"non-numeric token in {line!r}", line=lineno
            ) from None
    if len(rows) != n_vertex:
        raise FileFormatError(
            f"expected {n_vertex} vertices, found {len(rows)}"
        )
    data = np.array(rows)
    scalar = data[:, 3] if has_scalar else None
    return PointCloud(data[:, :3], scalar)
