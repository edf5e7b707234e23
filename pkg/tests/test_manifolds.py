import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.spatial import cKDTree

from nldrsmooth.errors import ValidationError
from nldrsmooth.manifolds import (
    KINDS,
    ManifoldSpec,
    SampleCloud,
    boundary_distance,
    embed_chart,
    in_domain,
    inward_normal,
    lattice_cloud,
    load_cloud,
    sample_manifold,
    save_cloud,
    spiral_angle,
    spiral_arclength,
)


def test_segment_small_sample():
    c = sample_manifold(ManifoldSpec("segment"), 4, 11)
    x = c.intrinsic[:, 0]
    assert c.points.shape == (4, 1)
    assert np.all((x >= 0) & (x <= 1))
    np.testing.assert_allclose(c.boundary_dist, np.minimum(x, 1 - x))


def test_embed_chart_identity_charts():
    assert embed_chart(ManifoldSpec("segment"), [0.5]) == pytest.approx([0.5])
    spec = ManifoldSpec("rectangle", d=4, params={"width": 1, "height": 2})
    np.testing.assert_array_equal(embed_chart(spec, [0.3, 1.1]), [0.3, 1.1, 0.0, 0.0])


def test_embed_chart_outside_domain():
    with pytest.raises(ValidationError):
        embed_chart(ManifoldSpec("segment"), [1.5])


@pytest.mark.parametrize("kind", KINDS)
def test_points_match_chart(kind):
    c = sample_manifold(ManifoldSpec(kind), 300, 1)
    np.testing.assert_allclose(c.points, embed_chart(c.spec, c.intrinsic), atol=1e-12)
    assert np.all(c.boundary_dist >= 0)


def test_circle_has_no_boundary():
    c = sample_manifold(ManifoldSpec("circle"), 100, 0)
    assert np.all(np.isinf(c.boundary_dist))
    np.testing.assert_allclose(np.linalg.norm(c.points, axis=1), 1.0)


def test_determinism():
    spec = ManifoldSpec("swiss_roll_hole")
    a = sample_manifold(spec, 500, 9)
    b = sample_manifold(spec, 500, 9)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.intrinsic.tobytes() == b.intrinsic.tobytes()


def test_cloud_is_read_only():
    c = sample_manifold(ManifoldSpec("segment"), 10, 0)
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_swiss_hole_is_empty(swiss_cloud):
    p = swiss_cloud.spec.params
    dist = np.linalg.norm(swiss_cloud.intrinsic - [p["hole_s"], p["hole_w"]], axis=1)
    assert dist.min() >= p["hole_radius"]


def test_swiss_chart_is_isometric_on_near_pairs(swiss_cloud):
    u, x = swiss_cloud.intrinsic, swiss_cloud.points
    d, j = cKDTree(u).query(u, k=2)
    order = np.argsort(d[:, 1])[:100]
    chart = d[order, 1]
    ambient = np.linalg.norm(x[order] - x[j[order, 1]], axis=1)
    assert np.all(ambient <= chart + 1e-12)
    np.testing.assert_allclose(ambient, chart, rtol=1e-3)


def test_swiss_jacobian_orthonormal(rng):
    spec = ManifoldSpec("swiss_roll_hole")
    pts = sample_manifold(spec, 20, 4).intrinsic
    eps = 1e-5
    for u in pts:
        cols = []
        for a in range(2):
            e = np.zeros(2)
            e[a] = eps
            cols.append((embed_chart(spec, u + e) - embed_chart(spec, u - e)) / (2 * eps))
        J = np.column_stack(cols)
        np.testing.assert_allclose(J.T @ J, np.eye(2), atol=1e-6)


def test_spiral_inverse():
    t = np.linspace(1.5 * np.pi, 4.5 * np.pi, 50)
    np.testing.assert_allclose(spiral_angle(spiral_arclength(t), t[0], t[-1]), t, atol=1e-9)


@pytest.mark.parametrize("kind", ["rectangle", "swiss_roll_hole"])
def test_uniformity_chi_square(kind):
    spec = ManifoldSpec(kind)
    c = sample_manifold(spec, 5000, 2)
    ext = np.asarray(spec.chart_extent)
    bins = 8
    cell = np.floor(c.intrinsic / ext * bins).clip(0, bins - 1).astype(int)
    counts = np.bincount(cell[:, 0] * bins + cell[:, 1], minlength=bins * bins)
    # expected counts from the admissible area of each cell (Monte Carlo on a fine grid)
    g = (np.arange(200) + 0.5) / 200
    gu = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2) * ext
    ok = in_domain(spec, gu)
    gcell = np.floor(gu / ext * bins).astype(int)
    area = np.bincount((gcell[:, 0] * bins + gcell[:, 1])[ok], minlength=bins * bins).astype(float)
    keep = area > 0
    expected = area[keep] / area.sum() * c.n
    assert stats.chisquare(counts[keep], expected).pvalue > 0.01


@pytest.mark.parametrize(
    "kind,params",
    [
        ("segment", {"length": 0}),
        ("rectangle", {"width": -1}),
        ("circle", {"radius": 0}),
        ("swiss_roll_hole", {"hole_radius": 100}),
        ("swiss_roll_hole", {"hole_s": 1.0}),
    ],
)
def test_invalid_specs(kind, params):
    with pytest.raises(ValidationError):
        ManifoldSpec(kind, params=params)


def test_hole_message():
    with pytest.raises(ValidationError, match="hole not inside chart"):
        ManifoldSpec("swiss_roll_hole", params={"hole_radius": 100})


def test_dimension_rules():
    with pytest.raises(ValidationError):
        ManifoldSpec("swiss_roll_hole", d=4)
    with pytest.raises(ValidationError):
        ManifoldSpec("circle", d=1)
    with pytest.raises(ValidationError):
        ManifoldSpec("nope")


def test_inward_normal_rectangle():
    spec = ManifoldSpec("rectangle", params={"width": 2, "height": 1})
    u = np.array([[0.01, 0.5], [1.99, 0.5], [1.0, 0.02], [1.0, 0.97]])
    np.testing.assert_array_equal(inward_normal(spec, u), [[1, 0], [-1, 0], [0, 1], [0, -1]])


def test_inward_normal_hole_points_away_from_center():
    spec = ManifoldSpec("swiss_roll_hole")
    c = np.array([spec.params["hole_s"], spec.params["hole_w"]])
    u = c + np.array([[3.1, 0.0], [0.0, -3.05]])
    np.testing.assert_allclose(inward_normal(spec, u), [[1, 0], [0, -1]])
    np.testing.assert_allclose(boundary_distance(spec, u), [0.1, 0.05], atol=1e-12)


def test_lattice_cloud():
    c = lattice_cloud(ManifoldSpec("rectangle"), [3, 5])
    assert c.n == 15 and c.seed is None
    with pytest.raises(ValidationError):
        lattice_cloud(ManifoldSpec("circle"), 10)


@pytest.mark.parametrize("kind", KINDS)
def test_csv_round_trip(tmp_path, kind):
    c = sample_manifold(ManifoldSpec(kind), 30, 5)
    path = tmp_path / "cloud.csv"
    save_cloud(c, path)
    back = load_cloud(path)
    assert back.points.tobytes() == c.points.tobytes()
    assert back.intrinsic.tobytes() == c.intrinsic.tobytes()
    np.testing.assert_array_equal(back.boundary_dist, c.boundary_dist)
    header = path.read_text().splitlines()[0].split(",")
    assert header[-1] == "boundary_dist" and header[0] == "x_1"


def test_boundaryless_csv_has_flag_not_sentinel(tmp_path):
    c = sample_manifold(ManifoldSpec("circle"), 5, 0)
    path = tmp_path / "c.csv"
    save_cloud(c, path)
    assert all(line.endswith(",") for line in path.read_text().splitlines()[1:])
    assert '"boundaryless": true' in path.with_suffix(".json").read_text()


def test_bad_cloud_shapes():
    spec = ManifoldSpec("segment")
    with pytest.raises(ValidationError):
        SampleCloud(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(3), 0, spec)


@settings(max_examples=30, deadline=None)
@given(
    w=st.floats(0.1, 10),
    h=st.floats(0.1, 10),
    seed=st.integers(0, 2**31 - 1),
)
def test_rectangle_samples_respect_chart(w, h, seed):
    spec = ManifoldSpec("rectangle", params={"width": w, "height": h})
    c = sample_manifold(spec, 20, seed)
    assert np.all(in_domain(spec, c.intrinsic))
    expect = np.minimum(c.intrinsic, [w, h] - c.intrinsic).min(axis=1)
    np.testing.assert_allclose(c.boundary_dist, expect, atol=1e-12)
