"""Synthetic ground-truth scenes: analytic surfaces, colors, cameras and references."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import DensityParams
from .fields import (ConstantField, DiskOpen, Field, HemisphereShell, RectPatch,
                     SphereShell, Union)
from .geometry import (PointCloud, generate_orbit_poses, read_cameras, read_ply,
                       write_cameras, write_ply)
from .render import (CheckerColor, ConstantColor, RenderConfig, read_ppm,
                     render_image, write_ppm)
from .sampling import SamplingConfig

SCENE_NAMES = ("sphere-shell", "disk-open", "hemisphere-shell", "two-planes", "rect-patch")

BASE_COLOR = (0.25, 0.45, 0.85)
CHECKER_COLORS = ((0.9, 0.35, 0.2), (0.2, 0.35, 0.9))
CHECKER_PERIOD = 0.1

# Reference renders: 64 + 4 * 112 = 512 samples per ray at a converged sharpness.
REFERENCE_SAMPLING = SamplingConfig(n0=64, per_iter=112, k=4, ahs=True)
REFERENCE_S = 2000.0


class HalfSpaceColor:
    """One color on the positive side of a plane, another on the negative side."""

    def __init__(self, normal, offset, rgb_pos, rgb_neg):
        self.normal = np.asarray(normal, dtype=np.float64)
        self.offset = float(offset)
        self.rgb_pos = np.asarray(rgb_pos, dtype=np.float64)
        self.rgb_neg = np.asarray(rgb_neg, dtype=np.float64)

    def value(self, p):
        side = np.asarray(p) @ self.normal > self.offset
        return np.where(side[..., None], self.rgb_pos, self.rgb_neg)


@dataclass
class Scene:
    name: str
    udf: Field
    color: object
    cameras: list = field(default_factory=list)
    background: tuple = (1.0, 1.0, 1.0)


def scene_cameras(n_views=36, radius=3.0, elevation_deg=30.0, width=64, height=64):
    """Orbit rings at +elevation, the equator and -elevation, with staggered azimuths.

    The equator ring sees flat surfaces edge-on, which pins their height where a
    constant color alone would leave it ambiguous.
    """
    counts = [n_views // 3 + (1 if i < n_views % 3 else 0) for i in range(3)]
    el = np.radians(elevation_deg)
    cams = []
    for ring, (n, elevation) in enumerate(zip(counts, (el, 0.0, -el))):
        if n:
            cams += generate_orbit_poses(n, radius, elevation, width=width, height=height,
                                         azimuth_offset=ring * 2 * np.pi / (3 * n))
    return cams


def build_scene(name, texture="textureless", n_views=36, resolution=64, radius=None,
                camera_radius=3.0) -> Scene:
    """Construct a named scene; ``texture`` is ``textureless`` or ``texture-rich``."""
    if name == "sphere-shell":
        udf = SphereShell((0.0, 0.0, 0.0), 0.8 if radius is None else radius)
    elif name == "disk-open":
        udf = DiskOpen((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 0.7 if radius is None else radius)
    elif name == "hemisphere-shell":
        udf = HemisphereShell((0.0, 0.0, 0.0), 0.7 if radius is None else radius, (0.0, 0.0, 1.0))
    elif name == "two-planes":
        half = (0.5, 0.5) if radius is None else (radius, radius)
        udf = Union([RectPatch((0.0, 0.0, 0.2), (0.0, 0.0, 1.0), half),
                     RectPatch((0.0, 0.0, -0.2), (0.0, 0.0, 1.0), half)])
    elif name == "rect-patch":
        half = (0.5, 0.5) if radius is None else (radius, radius)
        udf = RectPatch((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), half)
    else:
        raise ValueError(f"unknown scene {name!r}; choose from {', '.join(SCENE_NAMES)}")

    if texture == "textureless":
        if name == "two-planes":
            color = HalfSpaceColor((0.0, 0.0, 1.0), 0.0, (1.0, 0.0, 0.0), (0.0, 0.0, 1.0))
        else:
            color = ConstantColor(BASE_COLOR)
    elif texture == "texture-rich":
        color = CheckerColor(*CHECKER_COLORS, period=CHECKER_PERIOD)
    else:
        raise ValueError(f"unknown texture {texture!r}")

    extent = np.max(np.linalg.norm(udf.sample_surface(4096, np.random.default_rng(0)), axis=1))
    if extent > 1.0:
        raise ValueError(f"scene {name!r} extends beyond the unit sphere ({extent:.3f})")
    if camera_radius <= 1.0:
        raise ValueError("cameras must sit outside the unit sphere")
    cams = scene_cameras(n_views, camera_radius, width=resolution, height=resolution)
    return Scene(name, udf, color, cams)


def ground_truth_cloud(scene: Scene, n, seed=0) -> PointCloud:
    """``n`` points sampled uniformly by area on the scene surface."""
    if n < 1:
        raise ValueError("need at least one point")
    return PointCloud(scene.udf.sample_surface(n, np.random.default_rng(seed)))


def reference_config(background=(1.0, 1.0, 1.0)) -> RenderConfig:
    return RenderConfig(sampling=REFERENCE_SAMPLING, background=background)


def render_references(scene: Scene, seed=0, s=REFERENCE_S, cfg: RenderConfig | None = None):
    """Reference images of the exact analytic UDF, one per scene camera."""
    cfg = cfg or reference_config(scene.background)
    params = DensityParams(s=s)
    return [render_image(scene.udf, scene.color, cam, params, cfg, seed=seed * 1000 + i)
            for i, cam in enumerate(scene.cameras)]


def empty_scene(like: Scene) -> Scene:
    return Scene("empty", ConstantField(1.0), ConstantColor(BASE_COLOR), like.cameras,
                 like.background)


def save_bundle(directory, scene: Scene, images, gt: PointCloud) -> None:
    """Write ``view_XXX.ppm`` images, ``cameras.txt``, ``gt.ply`` and ``scene.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        write_ppm(directory / f"view_{i:03d}.ppm", img)
    write_cameras(directory / "cameras.txt", scene.cameras)
    write_ply(directory / "gt.ply", gt)
    (directory / "scene.txt").write_text(f"name {scene.name}\n")


def load_bundle(directory):
    """Return ``(images, cameras, gt_cloud, name)`` from a bundle directory."""
    directory = Path(directory)
    cams = read_cameras(directory / "cameras.txt")
    images = [read_ppm(directory / f"view_{i:03d}.ppm") for i in range(len(cams))]
    gt = read_ply(directory / "gt.ply") if (directory / "gt.ply").exists() else None
    name = None
    if (directory / "scene.txt").exists():
        name = (directory / "scene.txt").read_text().split()[1]
    return images, cams, gt, name
