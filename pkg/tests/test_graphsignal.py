"""Lattice/graph construction, filters, eigensolver, and smoothness
metrics, with independent numpy.linalg oracles."""

import numpy as np
import pytest

import foldgraph.graphsignal as gs
import foldgraph.theory as theory
from foldgraph.errors import DimensionError, DomainError


def test_lattice_covers_unit_square_row_major():
    lat = gs.make_lattice(3)
    assert lat.nodes.shape == (9, 2)
    assert np.array_equal(lat.nodes[0], [0.0, 0.0])
    assert np.array_equal(lat.nodes[1], [0.0, 0.5])  # second axis varies fastest
    assert np.array_equal(lat.nodes[-1], [1.0, 1.0])
    assert lat.nodes.min() == 0.0 and lat.nodes.max() == 1.0


def test_lattice_too_small():
    with pytest.raises(DomainError):
        gs.make_lattice(1)


def knn_oracle(nodes, k):
    """Explicit per-node sort with lowest-index tie breaks."""
    m = len(nodes)
    out = []
    for i in range(m):
        dists = [
            (float(np.sum((nodes[i] - nodes[j]) ** 2)), j)
            for j in range(m) if j != i
        ]
        dists.sort()
        out.append([j for _, j in dists[:k]])
    return out


@pytest.mark.parametrize("side,k", [(3, 2), (4, 5), (5, 8)])
def test_initial_adjacency_matches_knn_oracle(side, k):
    lat = gs.make_lattice(side)
    a = gs.build_initial_adjacency(lat, k, 0.2)
    expected = knn_oracle(lat.nodes, k)
    for i, neighbors in enumerate(expected):
        assert set(np.nonzero(a.weights[i])[0]) == set(neighbors)
    assert np.allclose(a.weights.sum(axis=1), 1.0)
    assert np.all(np.diag(a.weights) == 0.0)


def test_initial_adjacency_gaussian_weights():
    lat = gs.make_lattice(4)
    sigma = 0.1
    a = gs.build_initial_adjacency(lat, 3, sigma)
    i = 5
    nbrs = np.nonzero(a.weights[i])[0]
    d2 = np.sum((lat.nodes[i] - lat.nodes[nbrs]) ** 2, axis=1)
    raw = np.exp(-d2 / (2 * sigma * sigma))
    assert np.allclose(a.weights[i, nbrs], raw / raw.sum())


def test_initial_adjacency_bad_args():
    lat = gs.make_lattice(3)
    with pytest.raises(DomainError):
        gs.build_initial_adjacency(lat, 9, 0.1)
    with pytest.raises(DomainError):
        gs.build_initial_adjacency(lat, 2, 0.0)


def test_symmetrize():
    a = gs.GraphAdjacency(np.array([[0.0, 1.0], [0.0, 0.0]]))
    sym = gs.symmetrize(a)
    assert np.array_equal(sym.weights, [[0.0, 0.5], [0.5, 0.0]])


# ---------------------------------------------------------------------------
# filters


def test_haar_filter_formula():
    rng = np.random.default_rng(0)
    a = gs.GraphAdjacency(rng.uniform(0, 1, (5, 5)))
    x = rng.standard_normal((5, 3))
    expected = 0.5 * (np.eye(5) + a.weights) @ x
    assert np.allclose(gs.haar_filter(a, x), expected)


def test_alpha_half_is_haar_bitwise():
    rng = np.random.default_rng(1)
    a = gs.GraphAdjacency(rng.uniform(0, 1, (6, 6)))
    x = rng.standard_normal((6, 3))
    assert np.array_equal(
        gs.alpha_filter_adjacency(a, x, 0.5), gs.haar_filter(a, x)
    )


def test_alpha_endpoints():
    rng = np.random.default_rng(2)
    a = gs.GraphAdjacency(rng.uniform(0, 1, (4, 4)))
    x = rng.standard_normal((4, 2))
    assert np.array_equal(gs.alpha_filter_adjacency(a, x, 0.0), x)
    assert np.allclose(gs.alpha_filter_adjacency(a, x, 1.0), a.weights @ x)
    with pytest.raises(DomainError):
        gs.alpha_filter_adjacency(a, x, 1.5)


def test_laplacian_structure():
    rng = np.random.default_rng(3)
    a = gs.GraphAdjacency(rng.uniform(0, 1, (6, 6)))
    lap = gs.laplacian(a)
    assert np.allclose(lap, lap.T)
    assert np.allclose(lap @ np.ones(6), 0.0)
    eigs = np.linalg.eigvalsh(lap)
    assert eigs.min() > -1e-10


def test_laplacian_filter_matches_dense_inverse():
    rng = np.random.default_rng(4)
    a = gs.GraphAdjacency(rng.uniform(0, 1, (7, 7)))
    x = rng.standard_normal((7, 3))
    mu = 0.5
    expected = np.linalg.inv(gs.laplacian(a) + mu * np.eye(7)) @ x
    assert np.allclose(gs.laplacian_filter(a, x, mu), expected)
    with pytest.raises(DomainError):
        gs.laplacian_filter(a, x, 0.0)


def test_alpha_laplacian_matches_matrix_power():
    rng = np.random.default_rng(5)
    a = gs.GraphAdjacency(rng.uniform(0, 1, (6, 6)))
    x = rng.standard_normal((6, 2))
    mu = 0.5
    lam, v = np.linalg.eigh(gs.laplacian(a))
    for alpha in (0.0, 0.25, 0.5, 1.0):
        expected = v @ np.diag((mu + lam) ** (-2 * alpha)) @ v.T @ x
        assert np.allclose(gs.alpha_filter_laplacian(a, x, mu, alpha), expected)


def test_alpha_laplacian_half_matches_solve():
    rng = np.random.default_rng(6)
    a = gs.GraphAdjacency(rng.uniform(0, 1, (6, 6)))
    x = rng.standard_normal((6, 2))
    assert np.allclose(
        gs.alpha_filter_laplacian(a, x, 0.5, 0.5),
        gs.laplacian_filter(a, x, 0.5),
    )


# ---------------------------------------------------------------------------
# eigensolver and spectral radius


@pytest.mark.parametrize("seed", range(15))
def test_jacobi_matches_numpy_eigh(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    m = rng.standard_normal((n, n))
    m = 0.5 * (m + m.T)
    spec = gs.eig_symmetric(m)
    expected = np.linalg.eigvalsh(m)
    assert np.allclose(spec.eigenvalues, expected, atol=1e-10)
    # eigenvector residual and orthonormality
    v = spec.eigenvectors
    assert np.linalg.norm(m @ v - v * spec.eigenvalues) < 1e-10
    assert np.linalg.norm(v.T @ v - np.eye(n)) < 1e-10


def test_jacobi_sorted_ascending():
    rng = np.random.default_rng(42)
    m = rng.standard_normal((8, 8))
    spec = gs.eig_symmetric(0.5 * (m + m.T))
    assert np.all(np.diff(spec.eigenvalues) >= 0)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(DomainError):
        gs.eig_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(DimensionError):
        gs.eig_symmetric(np.zeros((2, 3)))


def test_jacobi_trivial_cases():
    spec = gs.eig_symmetric(np.zeros((3, 3)))
    assert np.array_equal(spec.eigenvalues, np.zeros(3))
    spec = gs.eig_symmetric(np.array([[4.0]]))
    assert spec.eigenvalues[0] == 4.0


@pytest.mark.parametrize("seed", range(10))
def test_spectral_radius_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    m = rng.standard_normal((n, n))
    m = 0.5 * (m + m.T)
    expected = np.max(np.abs(np.linalg.eigvalsh(m)))
    # power iteration slows down when the top eigenvalues nearly tie, so
    # only modest relative accuracy is guaranteed in general
    assert gs.spectral_radius(m) == pytest.approx(expected, rel=1e-6)


def test_spectral_radius_separated_spectrum_accurate():
    v = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))[0]
    m = v @ np.diag([5.0, 1.0, 0.5, 0.2, -0.1, -2.0]) @ v.T
    assert gs.spectral_radius(m) == pytest.approx(5.0, rel=1e-10)


def test_spectral_radius_zero_matrix():
    assert gs.spectral_radius(np.zeros((4, 4))) == 0.0


# ---------------------------------------------------------------------------
# smoothness metrics and the eight-point 'Z' example


def test_z_signals_are_fixed_points():
    a = theory.Z_ADJACENCY
    assert np.array_equal(a @ theory.Z_X1, theory.Z_X1)
    assert np.array_equal(a @ theory.Z_X2, theory.Z_X2)


def test_z_graph_tv_zero():
    adj = gs.GraphAdjacency(theory.Z_ADJACENCY)
    assert gs.graph_tv(adj, theory.Z_X1) < 1e-20
    assert gs.graph_tv(adj, theory.Z_X2) < 1e-20


def test_z_equivalence_with_grid():
    sig = gs.LatticeSignal(theory.Z_GRID)
    assert gs.equivalence_check(sig, theory.Z_X1, theory.Z_X2)
    # wrong coordinates are rejected
    assert not gs.equivalence_check(sig, theory.Z_X1, theory.Z_X1)


def test_graph_tv_zero_radius_falls_back_to_norm():
    adj = gs.GraphAdjacency(np.zeros((3, 3)))
    x = np.array([1.0, 2.0, 2.0])
    assert gs.graph_tv(adj, x) == float(x @ x)


def test_graph_tv_smooth_signal_small():
    # constant signal over a row-stochastic graph has zero variation
    rng = np.random.default_rng(7)
    w = rng.uniform(0, 1, (6, 6))
    for _ in range(200):  # balance to symmetric row-stochastic
        w /= w.sum(axis=1, keepdims=True)
        w = 0.5 * (w + w.T)
    adj = gs.GraphAdjacency(w)
    ones = np.ones(6)
    assert gs.graph_tv(adj, ones) < 1e-12


def test_quadratic_variation_matches_edge_sum():
    rng = np.random.default_rng(8)
    w = rng.uniform(0, 1, (5, 5))
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    lap = gs.laplacian(gs.GraphAdjacency(w))
    x = rng.standard_normal(5)
    by_edges = 0.5 * sum(
        w[i, j] * (x[i] - x[j]) ** 2 for i in range(5) for j in range(5)
    )
    assert gs.quadratic_variation(lap, x) == pytest.approx(by_edges)


def test_dtv_isolated_point():
    sig = gs.LatticeSignal(np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]]))
    assert gs.dtv(sig) == 1.0  # isolation term only


def test_dtv_diagonal_line_interior_smooth():
    grid = np.eye(4, dtype=int)
    sig = gs.LatticeSignal(grid)
    # interior diagonal cells see equal occupancy fore and aft
    assert gs.dtv_at(sig, 1, 1) == 0.0
    assert gs.dtv_at(sig, 2, 2) == 0.0


def test_dtv_transpose_invariant():
    rng = np.random.default_rng(9)
    grid = (rng.uniform(0, 1, (6, 6)) > 0.6).astype(int)
    assert gs.dtv(gs.LatticeSignal(grid)) == gs.dtv(gs.LatticeSignal(grid.T))


def test_dtv_zero_grid():
    assert gs.dtv(gs.LatticeSignal(np.zeros((4, 4), dtype=int))) == 0.0


def test_lattice_signal_validation():
    with pytest.raises(DomainError):
        gs.LatticeSignal(np.array([[0, 2], [1, 0]]))
    with pytest.raises(DimensionError):
        gs.LatticeSignal(np.zeros(4))


def test_equivalence_check_out_of_range_and_count():
    sig = gs.LatticeSignal(np.array([[1, 0], [0, 0]]))
    assert gs.equivalence_check(sig, [1.0], [1.0])
    assert not gs.equivalence_check(sig, [3.0], [1.0])
    assert not gs.equivalence_check(sig, [1.0, 1.0], [1.0, 1.0])


def test_export_spectrum_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    m = rng.standard_normal((5, 5))
    spec = gs.eig_symmetric(0.5 * (m + m.T))
    path = tmp_path / "spectrum.txt"
    gs.export_spectrum(path, spec)
    back = np.array([float(t) for t in path.read_text().split()])
    assert np.array_equal(back, spec.eigenvalues)
