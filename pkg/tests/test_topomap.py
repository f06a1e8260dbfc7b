"""Projection geometry, IDW interpolation, image assembly, normalization."""

import numpy as np
import pytest

from eegcaps import topomap as tm
from eegcaps.errors import (
    EmptyTrainingSet,
    ParseError,
    ShapeMismatch,
    SouthPoleSingularity,
)


def tiny_layout(positions, labels=None):
    positions = np.asarray(positions, dtype=float)
    labels = labels or [f"e{i}" for i in range(len(positions))]
    return tm.ElectrodeLayout(labels=labels, positions=positions).validate()


# ---------------------------------------------------------------------------
# layout


def test_default_layout_shape_and_order():
    layout = tm.default_layout()
    assert len(layout) == 30
    assert layout.labels[8:11] == ["C3", "Cz", "C4"]
    assert "T" not in layout.labels
    norms = np.linalg.norm(layout.positions, axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-9)


def test_layout_file_roundtrip(tmp_path):
    path = tmp_path / "layout.txt"
    path.write_text("# comment\nA 0 0 1\nB 1 0 0\n")
    layout = tm.load_layout(path)
    assert layout.labels == ["A", "B"]
    assert np.allclose(layout.positions, [[0, 0, 1], [1, 0, 0]])


def test_layout_file_rejects_garbage(tmp_path):
    path = tmp_path / "layout.txt"
    path.write_text("A 0 0\n")
    with pytest.raises(ParseError):
        tm.load_layout(path)


# ---------------------------------------------------------------------------
# azimuthal equidistant projection


def test_aep_reference_points():
    layout = tiny_layout([[0, 0, 1], [1, 0, 0], [0, 1, 0]])
    pts = tm.project_aep(layout)
    assert np.allclose(pts[0], [0.0, 0.0], atol=1e-15)
    assert np.allclose(pts[1], [np.pi / 2, 0.0], atol=1e-12)
    assert np.allclose(pts[2], [0.0, np.pi / 2], atol=1e-12)


def test_aep_preserves_vertex_distance():
    layout = tm.default_layout()
    pts = tm.project_aep(layout)
    radius = np.hypot(pts[:, 0], pts[:, 1])
    assert np.allclose(radius, np.arccos(layout.positions[:, 2]), atol=1e-12)


def test_aep_south_pole_rejected():
    layout = tiny_layout([[0, 0, 1], [0, 0, -1]])
    with pytest.raises(SouthPoleSingularity):
        tm.project_aep(layout)


# ---------------------------------------------------------------------------
# grid


def test_build_grid_span_and_spacing():
    pts = np.array([[1.0, 0.0], [0.0, -0.3]])
    grid = tm.build_grid(pts, resolution=32)
    assert grid.x[0] == pytest.approx(-1.05)
    assert grid.x[-1] == pytest.approx(1.05)
    assert np.allclose(np.diff(grid.x), 2.1 / 31)


def test_build_grid_degenerate_radius():
    angle = np.linspace(0, 2 * np.pi, 7)
    pts = 0.5 * np.column_stack([np.cos(angle), np.sin(angle)])
    grid = tm.build_grid(pts)
    assert grid.x[0] == pytest.approx(-0.525)
    assert grid.x[-1] == pytest.approx(0.525)


def test_build_grid_symmetric():
    pts = np.array([[0.8, 0.1], [-0.2, 0.7]])
    grid = tm.build_grid(pts)
    assert np.allclose(grid.x, -grid.x[::-1], atol=1e-15)
    assert np.array_equal(grid.x, grid.y)


# ---------------------------------------------------------------------------
# inverse-distance interpolation


def test_idw_constant_field():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(30, 2))
    grid = tm.build_grid(pts)
    plane = tm.interpolate_scatter(pts, np.full(30, 3.25), grid)
    assert np.allclose(plane, 3.25, atol=1e-12)


def test_idw_exact_hit():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    values = np.array([5.0, -2.0])
    grid = tm.GridSpec(x=np.array([-1.0, 0.0, 1.0]), y=np.array([0.0]))
    plane = tm.interpolate_scatter(pts, values, grid)
    assert plane[0, 1] == 5.0
    assert plane[0, 2] == -2.0


def test_idw_equidistant_midpoint():
    pts = np.array([[-1.0, 0.0], [1.0, 0.0]])
    grid = tm.GridSpec(x=np.array([0.0]), y=np.array([0.0]))
    plane = tm.interpolate_scatter(pts, np.array([0.0, 1.0]), grid)
    assert plane[0, 0] == pytest.approx(0.5)


def test_idw_respects_value_bounds():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pts = rng.uniform(-1, 1, size=(30, 2))
        values = rng.normal(size=30) * rng.uniform(0.1, 100)
        grid = tm.build_grid(pts)
        plane = tm.interpolate_scatter(pts, values, grid)
        assert plane.min() >= values.min() - 1e-12
        assert plane.max() <= values.max() + 1e-12


# ---------------------------------------------------------------------------
# image assembly


def projected_default():
    layout = tm.default_layout()
    pts = tm.project_aep(layout)
    return pts, tm.build_grid(pts)


def test_assemble_zero_features():
    pts, grid = projected_default()
    img = tm.assemble_image(np.zeros((30, 4, 2)), pts, grid, "s01", "HC", 0)
    assert img.data.shape == (8, 32, 32)
    assert np.array_equal(img.data, np.zeros_like(img.data))


def test_assemble_gamma_closed_is_channel_seven():
    pts, grid = projected_default()
    features = np.zeros((30, 4, 2))
    features[:, 3, 1] = np.linspace(1, 2, 30)     # (gamma, closed)
    img = tm.assemble_image(features, pts, grid, "s01", "PD", 3)
    assert tm.FULL_CHANNEL_ORDER[7] == ("gamma", "closed")
    assert np.all(img.data[7] > 0)
    assert np.array_equal(img.data[:7], np.zeros((7, 32, 32)))
    assert img.label == 1 and img.epoch_index == 3


def test_assemble_permutation_consistent():
    rng = np.random.default_rng(2)
    pts, grid = projected_default()
    features = rng.uniform(0, 5, size=(30, 4, 2))
    img = tm.assemble_image(features, pts, grid, "s", "HC", 0)
    perm = rng.permutation(30)
    img_perm = tm.assemble_image(features[perm], pts[perm], grid, "s", "HC", 0)
    assert np.allclose(img.data, img_perm.data, atol=1e-12)


# ---------------------------------------------------------------------------
# normalization


def const_image(value, depth=8, subject="s", group="HC", idx=0):
    order = tm.FULL_CHANNEL_ORDER if depth == 8 else None
    return tm.FeatureImage(np.full((depth, 32, 32), float(value)), subject, group, idx,
                           channel_order=order)


def test_normalizer_constant_image():
    norm = tm.fit_normalizer([const_image(5.0)])
    assert np.allclose(norm.mean, 5.0)
    assert np.all(norm.std == tm.STD_FLOOR)


def test_normalizer_two_point_distribution():
    norm = tm.fit_normalizer([const_image(0.0), const_image(2.0)])
    assert np.allclose(norm.mean, 1.0)
    assert np.allclose(norm.std, 1.0)


def test_normalizer_centers_training_set():
    rng = np.random.default_rng(3)
    images = [
        tm.FeatureImage(rng.normal(3.0, 2.0, size=(8, 32, 32)), f"s{i}", "HC", i)
        for i in range(4)
    ]
    norm = tm.fit_normalizer(images)
    normalized = [tm.apply_normalizer(img, norm) for img in images]
    pooled = np.stack([img.data for img in normalized])
    assert np.allclose(pooled.mean(axis=(0, 2, 3)), 0.0, atol=1e-9)


def test_normalizer_roundtrip_and_monotonicity():
    rng = np.random.default_rng(4)
    img = tm.FeatureImage(rng.uniform(0, 9, size=(8, 32, 32)), "s", "PD", 0)
    norm = tm.fit_normalizer([img, const_image(1.0)])
    fwd = tm.apply_normalizer(img, norm)
    back = tm.invert_normalizer(fwd, norm)
    assert np.allclose(back.data, img.data, atol=1e-9)
    for c in range(8):
        order_before = np.argsort(img.data[c].ravel())
        order_after = np.argsort(fwd.data[c].ravel())
        assert np.array_equal(order_before, order_after)


def test_normalizer_errors():
    with pytest.raises(EmptyTrainingSet):
        tm.fit_normalizer([])
    with pytest.raises(ShapeMismatch):
        tm.fit_normalizer([const_image(1.0, depth=8), const_image(1.0, depth=2)])
