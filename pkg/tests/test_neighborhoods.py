import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import subspace_angles
from scipy.spatial.distance import cdist

from nldrsmooth.errors import DegenerateFrameError, IsolatedPointError, ValidationError
from nldrsmooth.manifolds import ManifoldSpec, sample_manifold
from nldrsmooth.neighborhoods import ON_MEAN, ON_POINT, build_graph, frame_from_members, local_frame, local_frames
from nldrsmooth.spectral import align_procrustes

LINE = np.array([[0.0], [1.0], [2.0]])


def as_lists(graph):
    return [nb.tolist() for nb in graph.neighbors]


def test_h_ball_on_three_points():
    assert as_lists(build_graph(LINE, h=1.1)) == [[1], [0, 2], [1]]


def test_knn_tie_goes_to_smaller_index():
    assert as_lists(build_graph(LINE, k=1)) == [[1], [0], [1]]


def test_closed_and_open_neighborhoods():
    g = build_graph(LINE, h=1.1)
    assert g.closed(1).tolist() == [0, 1, 2]
    assert g.open(1).tolist() == [0, 2]
    gs = build_graph(LINE, h=1.1, include_self=True)
    assert as_lists(gs) == [[0, 1], [0, 1, 2], [1, 2]]
    assert gs.open(1).tolist() == [0, 2]


def test_isolated_point_names_point_and_min_h():
    pts = np.array([[0.0], [0.1], [5.0]])
    with pytest.raises(IsolatedPointError) as info:
        build_graph(pts, h=1.0)
    assert info.value.index == 0 or info.value.index == 2
    assert info.value.min_viable_h == pytest.approx(4.9)
    assert "minimum viable h" in str(info.value)


def test_mode_arguments():
    with pytest.raises(ValidationError):
        build_graph(LINE)
    with pytest.raises(ValidationError):
        build_graph(LINE, h=1.0, k=1)
    with pytest.raises(ValidationError):
        build_graph(LINE, k=3)
    with pytest.raises(ValidationError):
        build_graph(LINE, h=-1.0)


def test_interior_neighbor_count():
    c = sample_manifold(ManifoldSpec("segment"), 500, 0)
    g = build_graph(c, h=0.05)
    inner = c.boundary_dist > 0.05
    assert abs(g.sizes()[inner].mean() - 50) <= 0.2 * 50


def brute_h_ball(pts, h):
    D = cdist(pts, pts)
    return [[j for j in range(len(pts)) if j != i and D[i, j] <= h] for i in range(len(pts))]


def brute_knn(pts, k):
    D = cdist(pts, pts)
    out = []
    for i in range(len(pts)):
        order = sorted((D[i, j], j) for j in range(len(pts)) if j != i)
        out.append(sorted(j for _, j in order[:k]))
    return out


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(5, 60), h=st.floats(0.2, 0.8))
def test_h_ball_matches_brute_force(seed, n, h):
    pts = np.random.default_rng(seed).random((n, 2))
    try:
        g = build_graph(pts, h=h)
    except IsolatedPointError:
        assert any(len(nb) == 0 for nb in brute_h_ball(pts, h))
        return
    assert as_lists(g) == brute_h_ball(pts, h)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 60), k=st.integers(1, 8))
def test_knn_matches_brute_force_on_grid_ties(seed, n, k):
    # integer coordinates force many distance ties
    pts = np.random.default_rng(seed).integers(0, 5, size=(n, 2)).astype(float)
    k = min(k, n - 1)
    g = build_graph(pts, k=k)
    assert as_lists(g) == brute_knn(pts, k)
    assert all(len(nb) == k for nb in g.neighbors)


def test_line_frame_direction():
    direction = np.array([1.0, 2.0, -2.0]) / 3.0
    pts = np.outer(np.linspace(0, 1, 5), direction) + [0.3, -0.2, 1.0]
    f = frame_from_members(pts, 2, np.arange(5), 1, ON_POINT)
    assert abs(f.tangent_basis[:, 0] @ direction) > 1 - 1e-10


def test_flat_frame_matches_ambient(rect_small):
    g = build_graph(rect_small, h=0.4)
    for i in range(rect_small.n):
        f = local_frame(rect_small, g, i, 2)
        np.testing.assert_allclose(f.tangent_basis.T @ f.tangent_basis, np.eye(2), atol=1e-10)
        centered = rect_small.points[f.members] - rect_small.points[i]
        np.testing.assert_allclose(f.tangent_coords, centered @ f.tangent_basis, atol=1e-10)
        assert np.all(np.diff(f.singular_values) <= 0)
        res, _ = align_procrustes(f.tangent_coords, centered)
        assert res < 1e-10
        assert np.max(subspace_angles(f.tangent_basis, np.eye(2))) < 1e-8
        # the largest entry of every basis column is positive
        idx = np.argmax(np.abs(f.tangent_basis), axis=0)
        assert np.all(f.tangent_basis[idx, [0, 1]] > 0)


def test_centering_changes_only_shift_on_flat_patch(rect_small):
    g = build_graph(rect_small, h=0.4)
    for a, b in zip(local_frames(rect_small, g, 2, ON_POINT), local_frames(rect_small, g, 2, ON_MEAN)):
        assert np.max(subspace_angles(a.tangent_basis, b.tangent_basis)) < 1e-6
        # tau_point - tau_mean (in a common basis) is one constant row
        diff = a.tangent_coords @ a.tangent_basis.T - b.tangent_coords @ b.tangent_basis.T
        np.testing.assert_allclose(diff - diff[0], 0, atol=1e-12)


def test_identical_points_are_degenerate():
    pts = np.ones((3, 2))
    with pytest.raises(DegenerateFrameError):
        frame_from_members(pts, 0, [0, 1, 2], 1)


def test_left_singular_vectors_are_orthonormal(swiss_cloud):
    g = build_graph(swiss_cloud, h=4.0)
    f = local_frame(swiss_cloud, g, 17, 2, ON_MEAN)
    U = f.left_singular_vectors()
    np.testing.assert_allclose(U.T @ U, np.eye(2), atol=1e-10)
