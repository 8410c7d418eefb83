"""Cameras, rays, point clouds and the Chamfer metric.

Camera frame follows the OpenCV convention: x right, y down, z forward.
``rotation``/``translation`` map world points into the camera frame,
``X_cam = R @ X_world + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation must be orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        return -self.rotation.T @ self.translation

    @property
    def axis(self) -> np.ndarray:
        """Optical axis (camera +z) in world space."""
        return self.rotation[2].copy()

    def pose_matrix(self) -> np.ndarray:
        """3x4 world-to-camera matrix ``[R | t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError("ray bounds must satisfy 0 <= t_near < t_far")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` looking at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def generate_orbit_poses(n, radius, elevation, target=(0.0, 0.0, 0.0),
                         width=64, height=64, focal=None, azimuth_offset=0.0):
    """Cameras equally spaced in azimuth on a circle around ``target``.

    Azimuth of camera ``i`` is ``azimuth_offset + 2*pi*i/n``.  When ``focal``
    is omitted it is chosen so a unit sphere at the target fills about 90%
    of the image.
    """
    if n < 1:
        raise ValueError("need at least one camera")
    if radius <= 0:
        raise ValueError("orbit radius must be positive")
    target = np.asarray(target, dtype=np.float64)
    if focal is None:
        if radius > 1.05:
            half = np.tan(np.arcsin(1.0 / radius))
            focal = 0.5 * min(width, height) / (half / 0.9)
        else:
            focal = 1.2 * min(width, height)
    cams = []
    for i in range(n):
        az = azimuth_offset + 2.0 * np.pi * i / n
        pos = target + radius * np.array([
            np.cos(elevation) * np.cos(az),
            np.cos(elevation) * np.sin(az),
            np.sin(elevation),
        ])
        R = look_at(pos, target)
        cams.append(Camera(focal, focal, width / 2.0, height / 2.0, width, height,
                           R, -R @ pos))
    return cams


def pixel_ray(camera: Camera, px, py, t_near=0.0, t_far=None) -> Ray:
    """Ray through the center of pixel ``(px, py)``."""
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise ValueError(f"pixel ({px}, {py}) outside {camera.width}x{camera.height} image")
    o, d = camera_rays(camera, np.array([px]), np.array([py]))
    if t_far is None:
        t_far = t_near + 1e3
    return Ray(o[0], d[0], t_near, t_far)


def camera_rays(camera: Camera, px=None, py=None):
    """Origins and unit directions for pixel arrays (default: every pixel, row-major)."""
    if px is None:
        py, px = np.mgrid[0:camera.height, 0:camera.width]
        px, py = px.ravel(), py.ravel()
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d_cam = np.stack([
        (px + 0.5 - camera.cx) / camera.fx,
        (py + 0.5 - camera.cy) / camera.fy,
        np.ones_like(px),
    ], axis=-1)
    d = d_cam @ camera.rotation  # R^T applied to row vectors
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.center, d.shape).copy()
    return o, d


def sphere_bounds(origins, dirs, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Entry/exit arc lengths of rays through a sphere.

    Returns ``(near, far, hit)``; ``near`` is clamped at 0 so rays starting
    inside the sphere begin at their origin.
    """
    oc = np.asarray(origins) - np.asarray(center)
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - c
    hit = disc > 0
    root = np.sqrt(np.where(hit, disc, 0.0))
    near = np.maximum(-b - root, 0.0)
    far = -b + root
    hit &= far > near
    return near, far, hit


def _as_points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    return pts.reshape(-1, 3)


def nearest_distances(src, dst) -> np.ndarray:
    """Euclidean distance from every point of ``src`` to its nearest point in ``dst``."""
    a, b = _as_points(src), _as_points(dst)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point clouds must be non-empty")
    dist, _ = cKDTree(b).query(a, k=1)
    return dist


def chamfer(a, b) -> float:
    """Symmetric point-to-point Chamfer distance (mean of unsquared L2 distances)."""
    return 0.5 * (nearest_distances(a, b).mean() + nearest_distances(b, a).mean())


def write_ply(path, cloud) -> None:
    pts = _as_points(cloud)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY; only the x, y, z vertex properties are kept."""
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertex = None
        props = []
        in_vertex = False
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if n_vertex is None or not {"x", "y", "z"} <= set(props):
            raise ValueError(f"{path}: missing vertex x/y/z")
        cols = [props.index(k) for k in "xyz"]
        rows = [fh.readline().split() for _ in range(n_vertex)]
    try:
        pts = np.array([[float(r[c]) for c in cols] for r in rows], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed vertex data") from exc
    return PointCloud(pts.reshape(-1, 3))


def write_cameras(path, cameras) -> None:
    """One camera per line: width height fx fy cx cy followed by the 3x4 pose row-major."""
    with open(path, "w") as fh:
        fh.write("# width height fx fy cx cy r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2\n")
        for cam in cameras:
            vals = [cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy]
            vals += list(cam.pose_matrix().ravel())
            fh.write(" ".join(f"{v:.17g}" for v in vals) + "\n")


def read_cameras(path) -> list[Camera]:
    cams = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 18:
                raise ValueError(f"{path}:{lineno}: expected 18 values, got {len(vals)}")
            pose = np.array(vals[6:]).reshape(3, 4)
            cams.append(Camera(vals[2], vals[3], vals[4], vals[5], int(vals[0]), int(vals[1]),
                               pose[:, :3], pose[:, 3]))
    return cams
