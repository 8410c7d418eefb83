import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from udfr.geometry import (Camera, PointCloud, Ray, camera_rays, chamfer, generate_orbit_poses,
                           pixel_ray, read_cameras, read_ply, sphere_bounds, write_cameras,
                           write_ply)


def brute_chamfer(a, b):
    """O(n^2) reference: all pairwise distances, then row/column minima."""
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# orbit poses ----------------------------------------------------------------
def test_four_cameras_on_equator():
    cams = generate_orbit_poses(4, 3.0, 0.0)
    for i, cam in enumerate(cams):
        az = np.arctan2(cam.center[1], cam.center[0]) % (2 * np.pi)
        assert az == pytest.approx(i * np.pi / 2, abs=1e-12)
        assert np.linalg.norm(cam.center) == pytest.approx(3.0)
        # optical axis passes through the target
        assert np.allclose(np.cross(cam.axis, -cam.center), 0.0, atol=1e-12)
        assert cam.axis @ -cam.center > 0


def test_single_camera_at_azimuth_zero():
    (cam,) = generate_orbit_poses(1, 2.0, 0.0)
    assert np.allclose(cam.center, [2.0, 0.0, 0.0])


def test_72_cameras_have_5_degree_gaps():
    cams = generate_orbit_poses(72, 3.0, np.radians(30))
    az = np.array([np.degrees(np.arctan2(c.center[1], c.center[0])) for c in cams])
    # brute force: each camera's nearest azimuthal neighbour
    diff = np.abs((az[:, None] - az[None, :] + 180) % 360 - 180)
    np.fill_diagonal(diff, np.inf)
    assert np.allclose(diff.min(axis=1), 5.0, atol=1e-9)
    elev = [np.degrees(np.arcsin(c.center[2] / 3.0)) for c in cams]
    assert np.allclose(elev, 30.0)


@pytest.mark.parametrize("n, radius", [(0, 3.0), (3, 0.0), (3, -1.0)])
def test_orbit_rejects_bad_arguments(n, radius):
    with pytest.raises(ValueError):
        generate_orbit_poses(n, radius, 0.0)


# cameras and rays -----------------------------------------------------------
def test_principal_point_ray_is_optical_axis():
    cam = generate_orbit_poses(5, 3.0, 0.4)[2]
    ray = pixel_ray(cam, cam.cx - 0.5, cam.cy - 0.5)
    assert np.allclose(ray.direction, cam.axis, atol=1e-12)
    assert np.allclose(ray.origin, cam.center)


def test_identity_camera_center_ray():
    cam = Camera(64.0, 64.0, 32.0, 32.0, 64, 64)
    ray = pixel_ray(cam, 31.5, 31.5)
    assert np.allclose(ray.direction, [0.0, 0.0, 1.0])


def test_corner_pixel_matches_independent_unprojection():
    rng = np.random.default_rng(3)
    R = random_rotation(rng)
    t = rng.normal(size=3)
    cam = Camera(64.0, 64.0, 32.0, 32.0, 64, 64, R, t)
    ray = pixel_ray(cam, 0, 0)
    # Project a point along the ray and confirm it lands on pixel center (0.5, 0.5).
    X = ray.origin + 2.7 * ray.direction
    Xc = R @ X + t
    u = cam.fx * Xc[0] / Xc[2] + cam.cx
    v = cam.fy * Xc[1] / Xc[2] + cam.cy
    assert (u, v) == pytest.approx((0.5, 0.5), abs=1e-10)
    # And by solving the projection equations for the direction explicitly.
    K = np.array([[64.0, 0, 32.0], [0, 64.0, 32.0], [0, 0, 1]])
    d = R.T @ np.linalg.solve(K, [0.5, 0.5, 1.0])
    assert np.allclose(ray.direction, d / np.linalg.norm(d), atol=1e-12)


def test_pixel_ray_bounds_checked():
    cam = Camera(64.0, 64.0, 32.0, 32.0, 64, 64)
    for px, py in [(-1, 0), (64, 0), (0, 64), (0, -0.5)]:
        with pytest.raises(ValueError):
            pixel_ray(cam, px, py)


def test_all_camera_rays_unit_and_forward():
    cam = generate_orbit_poses(3, 3.0, 0.5)[1]
    o, d = camera_rays(cam)
    assert d.shape == (64 * 64, 3)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    assert np.all(d @ cam.axis > 0)
    assert np.allclose(o, cam.center)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(64.0, 64.0, 32, 32, 64, 64, rotation=np.diag([1.0, 1.0, 1.1]))
    with pytest.raises(ValueError):
        Camera(0.0, 64.0, 32, 32, 64, 64)
    with pytest.raises(ValueError):
        Camera(64.0, 64.0, 32, 32, 0, 64)


def test_ray_validation():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]), 0.0, 1.0)
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 1.0, 1.0)


def test_sphere_bounds():
    o = np.array([[0.0, 0.0, -3.0], [0.0, 2.0, -3.0], [0.0, 0.0, 0.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    near, far, hit = sphere_bounds(o, d, 1.0)
    assert hit.tolist() == [True, False, True]
    assert (near[0], far[0]) == pytest.approx((2.0, 4.0))
    assert (near[2], far[2]) == pytest.approx((0.0, 1.0))  # origin inside: near clamps to 0


# chamfer --------------------------------------------------------------------
def test_chamfer_identity_and_single_pair():
    a = np.random.default_rng(0).normal(size=(50, 3))
    assert chamfer(a, a) == 0.0
    assert chamfer([[0.0, 0, 0]], [[1.0, 0, 0]]) == pytest.approx(1.0)


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(200, 3)), rng.normal(size=(200, 3))
    assert abs(chamfer(a, b) - brute_chamfer(a, b)) <= 1e-12


def test_chamfer_rejects_empty():
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 40))
def test_chamfer_symmetric_and_rigid_invariant(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-15)
    R, t = random_rotation(rng), rng.normal(size=3) * 5
    assert chamfer(a @ R.T + t, b @ R.T + t) == pytest.approx(chamfer(a, b), abs=1e-9)


# file formats ---------------------------------------------------------------
def test_ply_round_trip(tmp_path):
    pts = np.random.default_rng(2).uniform(-1, 1, size=(100, 3))
    write_ply(tmp_path / "a.ply", PointCloud(pts))
    back = read_ply(tmp_path / "a.ply")
    assert np.allclose(back.points, pts, atol=1e-8)


def test_ply_empty_and_malformed(tmp_path):
    write_ply(tmp_path / "e.ply", np.zeros((0, 3)))
    assert len(read_ply(tmp_path / "e.ply")) == 0
    (tmp_path / "bad.ply").write_text("hello\n")
    with pytest.raises(ValueError):
        read_ply(tmp_path / "bad.ply")


def test_camera_file_round_trip(tmp_path):
    cams = generate_orbit_poses(6, 2.5, 0.3, width=40, height=30)
    write_cameras(tmp_path / "cams.txt", cams)
    back = read_cameras(tmp_path / "cams.txt")
    assert len(back) == 6
    for a, b in zip(cams, back):
        assert np.array_equal(a.pose_matrix(), b.pose_matrix())
        assert (a.fx, a.cx, a.width, a.height) == (b.fx, b.cx, b.width, b.height)


def test_point_cloud_rejects_nan():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))
