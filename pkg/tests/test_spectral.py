import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import subspace_angles
from scipy.optimize import minimize_scalar

from nldrsmooth.errors import SolverError, ValidationError
from nldrsmooth.manifolds import ManifoldSpec, sample_manifold
from nldrsmooth.neighborhoods import build_graph
from nldrsmooth.operators import op_diffusion_maps, op_laplacian_eigenmaps, op_llr_laplacian, op_ltsa
from nldrsmooth.spectral import (
    NULL_TOL,
    align_procrustes,
    bottom_eigenpairs,
    canonical_correlations,
    eigen_matrix,
    eigenvalue_clusters,
    embed,
    save_embedding,
)


@pytest.fixture(scope="module")
def segment_le(segment_cloud):
    return op_laplacian_eigenmaps(segment_cloud, build_graph(segment_cloud, h=0.05))


def test_cycle_graph_spectrum():
    n = 60
    theta = 2 * np.pi * np.arange(n) / n
    X = np.column_stack([np.cos(theta), np.sin(theta)])
    op = op_laplacian_eigenmaps(X, build_graph(X, k=2), kernel="unit")
    vals, _ = bottom_eigenpairs(op, 7)
    expected = np.sort(2 - 2 * np.cos(2 * np.pi * np.array([0, 1, -1, 2, -2, 3, -3]) / n))
    assert np.allclose(vals, expected, atol=1e-12)


def test_laplacian_bottom_pair_is_constant(segment_le):
    vals, vecs = bottom_eigenpairs(segment_le, 2)
    assert abs(vals[0]) <= 1e-10 * vals[1]
    v = vecs[:, 0]
    assert v.std() / abs(v.mean()) < 1e-8


def test_le_first_eigenvector_is_cosine(segment_cloud, segment_le):
    v = embed(segment_le, 1).coords[:, 0]
    c = np.cos(np.pi * segment_cloud.intrinsic[:, 0])
    assert abs(np.corrcoef(v, c)[0, 1]) >= 0.99


def test_eigen_residuals_within_bound(segment_cloud):
    op = op_llr_laplacian(segment_cloud, build_graph(segment_cloud, h=0.05))
    A = eigen_matrix(op)
    vals, vecs = bottom_eigenpairs(op, 5)
    norm = abs(A).sum(axis=1).max()
    assert np.all(np.linalg.norm(A @ vecs - vecs * vals, axis=0) <= 1e-6 * norm)


def test_sign_convention_is_deterministic(segment_le):
    _, vecs = bottom_eigenpairs(segment_le, 4)
    idx = np.argmax(np.abs(vecs), axis=0)
    assert np.all(vecs[idx, np.arange(4)] > 0)


def test_dense_and_iterative_agree():
    cloud = sample_manifold(ManifoldSpec("segment"), 500, 2)
    op = op_laplacian_eigenmaps(cloud, build_graph(cloud, h=0.05))
    vd, Vd = bottom_eigenpairs(op, 6, solver="dense")
    vi, Vi = bottom_eigenpairs(op, 6, solver="iterative")
    assert np.allclose(vi, vd, rtol=1e-8, atol=1e-8 * vd[-1])
    assert subspace_angles(Vd, Vi).max() <= 1e-6


def test_iterative_solver_reports_non_convergence(segment_le, monkeypatch):
    from scipy.sparse.linalg import ArpackNoConvergence

    import nldrsmooth.spectral as spectral

    def stalled(A, k, **kwargs):
        vecs = np.ones((A.shape[0], 1)) / np.sqrt(A.shape[0])
        raise ArpackNoConvergence("no convergence", np.array([0.5]), vecs)

    monkeypatch.setattr(spectral, "eigsh", stalled)
    with pytest.raises(SolverError, match="did not converge after 7 iterations; residuals"):
        bottom_eigenpairs(segment_le, 3, solver="iterative", maxiter=7)


@pytest.mark.parametrize("p", [0, 1000])
def test_p_out_of_range(segment_le, p):
    with pytest.raises(ValidationError):
        bottom_eigenpairs(segment_le, p)


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.integers(1, 5))
def test_embedding_invariants(seed, p):
    cloud = sample_manifold(ManifoldSpec("segment"), 300, seed)
    op = op_laplacian_eigenmaps(cloud, build_graph(cloud, h=0.08))
    emb = embed(op, p)
    C = emb.coords
    assert np.abs(C.T @ C - np.eye(p)).max() <= 1e-8
    assert np.all(np.diff(emb.spectrum) >= 0) and np.all(emb.spectrum >= 0)
    assert emb.dropped_trivial
    assert np.abs(C.T @ np.ones(cloud.n)).max() <= 1e-8


def test_ltsa_rectangle_reproduces_chart(rect_cloud):
    emb = embed(op_ltsa(rect_cloud, build_graph(rect_cloud, h=0.08)), 2)
    residual, _ = align_procrustes(emb.coords, rect_cloud.intrinsic, affine=True)
    assert residual <= 0.05
    # the degenerate null space (constant plus two affine functions) is reported
    assert [0, 1] in emb.clusters


def test_dm_embedding_is_right_singular_vectors():
    cloud = sample_manifold(ManifoldSpec("segment"), 300, 1)
    op = op_diffusion_maps(cloud, build_graph(cloud, h=0.08))
    emb = embed(op, 4)
    _, s, Vt = np.linalg.svd(op.L.toarray())
    right = Vt[::-1][1:5].T
    assert s[-1] <= 1e-10 * s[0]
    assert subspace_angles(emb.coords, right).max() <= 1e-6


def test_embedding_round_trip_csv(segment_le, tmp_path):
    import json

    emb = embed(segment_le, 3)
    sidecar = save_embedding(emb, tmp_path / "embedding.csv")
    coords = np.loadtxt(tmp_path / "embedding.csv", delimiter=",", skiprows=1)
    assert np.array_equal(coords, emb.coords)
    header = (tmp_path / "embedding.csv").read_text().splitlines()[0]
    assert header == "e_1,e_2,e_3"
    meta = json.loads(sidecar.read_text())
    assert meta["spectrum"] == emb.spectrum.tolist() and meta["method"]["method"] == "laplacian_eigenmaps"


def test_null_tolerance_is_relative(segment_le):
    emb = embed(segment_le, 1)
    assert emb.spectrum[0] > NULL_TOL * emb.lambda_max


# --------------------------------------------------------------------------
# Procrustes and canonical correlations


def test_procrustes_identity(rng):
    A = rng.normal(size=(50, 2))
    residual, T = align_procrustes(A, A)
    assert residual <= 1e-12
    assert np.allclose(T.rotation, np.eye(2)) and T.scale == pytest.approx(1.0)
    assert np.allclose(T.shift, 0, atol=1e-12)


def test_procrustes_similarity_invariance(rng):
    A = rng.normal(size=(80, 2))
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    B = 3.0 * A @ R + np.array([1.0, -2.0])
    residual, T = align_procrustes(A, B)
    assert residual <= 1e-10
    assert T.scale == pytest.approx(3.0)


def _brute_force_residual(A, B):
    Ac, Bc = A - A.mean(axis=0), B - B.mean(axis=0)

    def loss(theta, flip):
        c, s = np.cos(theta), np.sin(theta)
        R = np.array([[c, -s], [s, c]]) @ np.diag([1.0, flip])
        AR = Ac @ R
        scale = np.sum(AR * Bc) / np.sum(AR * AR)
        return np.linalg.norm(scale * AR - Bc)

    best = np.inf
    for flip in (1.0, -1.0):
        grid = np.linspace(0, 2 * np.pi, 721)
        t0 = grid[np.argmin([loss(t, flip) for t in grid])]
        res = minimize_scalar(lambda t: loss(t, flip), bounds=(t0 - 0.01, t0 + 0.01), method="bounded",
                              options={"xatol": 1e-12})
        best = min(best, res.fun)
    return best / np.linalg.norm(Bc)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_procrustes_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
    residual, _ = align_procrustes(A, B)
    assert residual == pytest.approx(_brute_force_residual(A, B), abs=1e-6)


def test_procrustes_rejects_degenerate_target(rng):
    with pytest.raises(ValidationError):
        align_procrustes(rng.normal(size=(10, 2)), np.ones((10, 2)))


def test_canonical_correlations_span(rng):
    X = rng.normal(size=(200, 3))
    M = rng.normal(size=(3, 3))
    assert np.allclose(canonical_correlations(X @ M, X), 1.0)
    Y = rng.normal(size=(200, 2))
    assert canonical_correlations(X, Y).max() < 0.5


def test_eigenvalue_clusters():
    assert eigenvalue_clusters([0.0, 0.0, 1.0, 2.0, 2.0 + 1e-6]) == [[0, 1], [2], [3, 4]]
