import numpy as np
import pytest
from scipy.spatial import cKDTree

from udfr.density import DensityParams, max_weight_offset
from udfr.extract import (ExtractionConfig, classify_ray, extract_point_cloud, max_weight_point,
                          write_report)
from udfr.fields import ConstantField, RectPatch
from udfr.geometry import Ray, nearest_distances
from udfr.render import ConstantColor, RenderConfig, render_ray
from udfr.sampling import RaySamples
from udfr.scenes import build_scene, ground_truth_cloud

P1000 = DensityParams(s=1000.0, c=5.0)


def line_samples(w, t=None):
    """Samples on the x axis from the origin, with the given weights."""
    w = np.asarray(w, dtype=np.float64)
    t = np.linspace(0.1, 0.9, len(w)) if t is None else np.asarray(t, dtype=np.float64)
    ray = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.0, 3.0)
    return RaySamples(ray, t, np.full(len(t), 0.1), w=w)


# classification and max weight ------------------------------------------------------
def test_classify_outside_mass_is_background():
    s = line_samples([0.0, 0.9], t=[0.5, 2.0])
    assert not classify_ray(s)


def test_classify_inside_mass():
    assert classify_ray(line_samples([0.4, 0.5]))
    assert not classify_ray(line_samples([0.25, 0.25]))  # exactly 0.5 is background
    with pytest.raises(ValueError):
        classify_ray(RaySamples(line_samples([0.1]).ray, np.array([0.5]), np.array([0.1])))


def test_max_weight_point_examples():
    s = line_samples([0.1, 0.7, 0.2])
    assert np.allclose(max_weight_point(s), s.points[1])
    s = line_samples([0.0, 0.1, 0.3, 0.1, 0.3, 0.0])
    assert np.allclose(max_weight_point(s), s.points[2])


def test_max_weight_point_on_plane_has_bounded_bias():
    ray = Ray(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), 0.0, 2.0)
    bound = 2 * float(max_weight_offset(P1000, -1.0))
    for seed in range(10):
        _, _, s = render_ray(RectPatch(), ConstantColor((1.0, 0.0, 0.0)), ray, P1000,
                             RenderConfig(), np.random.default_rng(seed))
        p = max_weight_point(s)
        assert abs(p[2]) <= bound


def test_config_validation():
    for kw in ({"pixel_stride": 0}, {"pixel_stride": 2.5}, {"fg_threshold": 1.0},
               {"fg_threshold": 0.0}, {"roi_radius": -1.0}):
        with pytest.raises(ValueError):
            ExtractionConfig(**kw)


# whole clouds -----------------------------------------------------------------------
@pytest.fixture(scope="module")
def sphere_cloud():
    scene = build_scene("sphere-shell")
    return scene, extract_point_cloud(scene.udf, scene.cameras, P1000).points


def test_empty_field_gives_empty_cloud(caplog):
    scene = build_scene("sphere-shell", n_views=2)
    report = []
    cloud = extract_point_cloud(ConstantField(1.0), scene.cameras, P1000, report=report)
    assert len(cloud) == 0
    assert "empty" in caplog.text
    assert [r.foreground for r in report] == [0, 0]
    with pytest.raises(ValueError):
        extract_point_cloud(ConstantField(1.0), [], P1000)


def test_sphere_points_on_surface(sphere_cloud):
    scene, pts = sphere_cloud
    assert len(pts) > 1000
    d = scene.udf.value(pts)
    assert d.max() < 0.01
    dense = ground_truth_cloud(scene, 100_000, seed=1).points
    assert nearest_distances(pts, dense).mean() < 0.01
    assert np.all(np.linalg.norm(pts, axis=1) <= 1.01)


def test_sphere_mean_bias_bound(sphere_cloud):
    scene, pts = sphere_cloud
    worst = max(float(max_weight_offset(P1000, np.cos(np.radians(a))))
                for a in np.linspace(91, 180, 90))
    spacing = 2.0 / ExtractionConfig().sampling.total  # ROI diameter over samples per ray
    assert scene.udf.value(pts).mean() <= worst + spacing


def test_disk_open_region_stays_open():
    scene = build_scene("disk-open")
    pts = extract_point_cloud(scene.udf, scene.cameras, P1000).points
    assert len(pts) > 500
    assert scene.udf.value(pts).max() <= 0.02
    axis_r = np.hypot(pts[:, 0], pts[:, 1])
    assert not np.any((axis_r < 0.05) & (np.abs(pts[:, 2]) > 0.1))


def test_stride_ten_is_subset_like(sphere_cloud):
    scene, dense = sphere_cloud
    sparse = extract_point_cloud(scene.udf, scene.cameras, P1000,
                                 ExtractionConfig(pixel_stride=10)).points
    spacing = cKDTree(dense).query(dense, k=2)[0][:, 1].mean()
    assert 0 < len(sparse) < len(dense)
    assert nearest_distances(sparse, dense).mean() < spacing


def test_extraction_deterministic(tmp_path):
    scene = build_scene("rect-patch", n_views=3)
    a, b = [], []
    pa = extract_point_cloud(scene.udf, scene.cameras, P1000, report=a).points
    pb = extract_point_cloud(scene.udf, scene.cameras, P1000, report=b).points
    assert np.array_equal(pa, pb) and a == b
    write_report(tmp_path / "r.csv", a)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "camera_id,rays_cast,foreground,mean_max_weight"
    assert len(lines) == 4 and lines[1].startswith("0,169,")
