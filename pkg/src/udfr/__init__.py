"""Unsigned distance field reconstruction by differentiable volume rendering.

Analytic and voxel-grid UDFs, a bias-bounded density for open surfaces,
hierarchical ray sampling, a gradient-checked Adam fit of a voxel grid to
multi-view images, and max-weight point-cloud extraction.
"""

from .density import (DensityParams, max_weight_offset, modified_density,
                      perpendicular_pass_transparency, planar_transparency,
                      theoretical_density)
from .extract import ExtractionConfig, classify_ray, extract_point_cloud, max_weight_point
from .fields import (ConstantField, DiskOpen, HemisphereShell, RectPatch, SoftplusGrid,
                     SphereShell, Union, VoxelGrid)
from .geometry import Camera, PointCloud, Ray, chamfer, generate_orbit_poses, pixel_ray
from .optimize import LossWeights, TrainConfig, TrainState, fit
from .render import RenderConfig, render_image, render_ray
from .sampling import SamplingConfig, hierarchical_sample
from .scenes import build_scene, ground_truth_cloud, render_references

__all__ = [
    "DensityParams",
    "max_weight_offset",
    "modified_density",
    "perpendicular_pass_transparency",
    "planar_transparency",
    "theoretical_density",
    "ExtractionConfig",
    "classify_ray",
    "extract_point_cloud",
    "max_weight_point",
    "ConstantField",
    "DiskOpen",
    "HemisphereShell",
    "RectPatch",
    "SoftplusGrid",
    "SphereShell",
    "Union",
    "VoxelGrid",
    "Camera",
    "PointCloud",
    "Ray",
    "chamfer",
    "generate_orbit_poses",
    "pixel_ray",
    "LossWeights",
    "TrainConfig",
    "TrainState",
    "fit",
    "RenderConfig",
    "render_image",
    "render_ray",
    "SamplingConfig",
    "hierarchical_sample",
    "build_scene",
    "ground_truth_cloud",
    "render_references",
]

__version__ = "0.1.0"
