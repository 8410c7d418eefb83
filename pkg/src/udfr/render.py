"""Emission-absorption quadrature over a UDF and a view-independent color field."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import DensityParams, modified_density, theoretical_density
from .fields import Field, VoxelGrid, gradient_with_flag
from .geometry import Camera, Ray, camera_rays, sphere_bounds
from .sampling import (RaySamples, SamplingConfig, hierarchical_sample_batch,
                       segment_lengths)

WHITE = (1.0, 1.0, 1.0)


class ConstantColor:
    def __init__(self, rgb):
        self.rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)

    def value(self, p):
        p = np.asarray(p)
        return np.broadcast_to(self.rgb, p.shape[:-1] + (3,)).copy()


class CheckerColor:
    """3D checkerboard alternating two colors with the given cell size."""

    def __init__(self, rgb_a, rgb_b, period=0.1):
        self.rgb_a = np.clip(np.asarray(rgb_a, dtype=np.float64), 0.0, 1.0)
        self.rgb_b = np.clip(np.asarray(rgb_b, dtype=np.float64), 0.0, 1.0)
        self.period = float(period)

    def value(self, p):
        cells = np.floor(np.asarray(p, dtype=np.float64) / self.period).astype(np.int64)
        odd = (cells.sum(axis=-1) % 2).astype(bool)
        return np.where(odd[..., None], self.rgb_b, self.rgb_a)


class GridColor:
    """RGB node values on a trilinear grid; ``data`` has shape ``(n_nodes, 3)``."""

    def __init__(self, resolution, data=None, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
                 fill=0.5):
        n = int(np.prod(resolution))
        self.grid = VoxelGrid.wrap(np.zeros(n), resolution, bounds)
        self.data = np.full((n, 3), float(fill)) if data is None else \
            np.asarray(data, dtype=np.float64).reshape(n, 3).copy()

    def value(self, p):
        idx, w, _ = self.grid.stencil(p, with_grad=False)
        return np.clip(np.einsum("...k,...kc->...c", w, self.data[idx]), 0.0, 1.0)


ColorField = ConstantColor | CheckerColor | GridColor


@dataclass
class Image:
    width: int
    height: int
    rgb: np.ndarray  # (height, width, 3), floats in [0, 1]

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64).reshape(self.height, self.width, 3)


@dataclass(frozen=True)
class RenderConfig:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    background: tuple = WHITE
    density: str = "modified"  # or "theoretical"
    roi_radius: float = 1.0
    chunk: int = 4096

    def __post_init__(self):
        if self.density not in ("modified", "theoretical"):
            raise ValueError(f"unknown density mode {self.density!r}")


@dataclass
class RenderBatch:
    """Per-ray outputs and per-sample records for a batch of rays."""

    rgb: np.ndarray
    weight_sum: np.ndarray
    hit: np.ndarray
    t: np.ndarray
    delta: np.ndarray
    f: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    T: np.ndarray
    w: np.ndarray
    points: np.ndarray


def compute_weights(sigma, delta):
    """Alpha, transmittance and weight per sample along the last axis.

    ``alpha_i = 1 - exp(-sigma_i delta_i)``, ``T_i = prod_{j<i} (1 - alpha_j)``
    and ``w_i = T_i alpha_i``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("densities must be non-negative")
    # Transmittance via the cumulative optical depth avoids a running product.
    tau = sigma * delta
    alpha = -np.expm1(-tau)
    depth = np.cumsum(tau, axis=-1) - tau
    T = np.exp(-depth)
    return alpha, T, T * alpha


def _forward_fill_gradients(grad, degenerate, dirs):
    n = grad.shape[1]
    idx = np.where(degenerate, -1, np.arange(n))
    idx = np.maximum.accumulate(idx, axis=1)
    filled = np.take_along_axis(grad, np.maximum(idx, 0)[..., None], 1)
    # No earlier valid gradient: treat the sample as head-on.
    return np.where((idx < 0)[..., None], -dirs[:, None, :], filled)


def shade_samples(udf: Field, t, f, origins, dirs, far, params: DensityParams, mode):
    """Densities for sorted samples ``t`` with known distances ``f``."""
    points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    delta = segment_lengths(t, far)
    if mode == "theoretical":
        grad, degenerate = gradient_with_flag(udf, points)
        grad = _forward_fill_gradients(grad, degenerate, dirs)
        norm = np.linalg.norm(grad, axis=-1)
        cos = np.einsum("rnj,rj->rn", grad, dirs) / np.where(norm > 0, norm, 1.0)
        sigma = theoretical_density(f, cos, params.s)
    else:
        sigma = modified_density(f, params)
    return points, delta, sigma


def render_rays(udf: Field, color, origins, dirs, params: DensityParams,
                cfg: RenderConfig = RenderConfig(), rng=None, near=None, far=None) -> RenderBatch:
    """Render a batch of rays; sampling is limited to the region-of-interest sphere
    unless explicit ``near``/``far`` bounds are given."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n_rays = len(origins)
    if near is None:
        near, far, hit = sphere_bounds(origins, dirs, cfg.roi_radius)
    else:
        near = np.broadcast_to(np.asarray(near, dtype=np.float64), (n_rays,)).copy()
        far = np.broadcast_to(np.asarray(far, dtype=np.float64), (n_rays,)).copy()
        hit = far > near
    n = cfg.sampling.total
    bg = np.asarray(cfg.background, dtype=np.float64)
    out = RenderBatch(
        rgb=np.broadcast_to(bg, (n_rays, 3)).copy(), weight_sum=np.zeros(n_rays), hit=hit,
        t=np.zeros((n_rays, n)), delta=np.zeros((n_rays, n)), f=np.zeros((n_rays, n)),
        sigma=np.zeros((n_rays, n)), alpha=np.zeros((n_rays, n)), T=np.ones((n_rays, n)),
        w=np.zeros((n_rays, n)), points=np.zeros((n_rays, n, 3)))
    rows = np.flatnonzero(hit)
    if len(rows) == 0:
        return out
    o, d, lo, hi = origins[rows], dirs[rows], near[rows], far[rows]
    t, f = hierarchical_sample_batch(udf, o, d, lo, hi, params, cfg.sampling, rng)
    points, delta, sigma = shade_samples(udf, t, f, o, d, hi, params, cfg.density)
    alpha, T, w = compute_weights(sigma, delta)
    colors = color.value(points)
    wsum = w.sum(axis=1)
    out.rgb[rows] = np.einsum("rn,rnc->rc", w, colors) + (1.0 - wsum)[:, None] * bg
    out.weight_sum[rows] = wsum
    for name, val in (("t", t), ("delta", delta), ("f", f), ("sigma", sigma),
                      ("alpha", alpha), ("T", T), ("w", w), ("points", points)):
        getattr(out, name)[rows] = val
    return out


def render_ray(udf: Field, color, ray: Ray, params: DensityParams,
               cfg: RenderConfig = RenderConfig(), rng=None):
    """Render one ray over its own ``[t_near, t_far]``.

    Returns ``(rgb, weight_sum, samples)`` with ``samples`` fully populated.
    """
    b = render_rays(udf, color, ray.origin[None], ray.direction[None], params, cfg, rng,
                    near=ray.t_near, far=ray.t_far)
    samples = RaySamples(ray, b.t[0], b.delta[0], f=b.f[0], sigma=b.sigma[0],
                         alpha=b.alpha[0], T=b.T[0], w=b.w[0])
    return b.rgb[0], float(b.weight_sum[0]), samples


def render_image(udf: Field, color, camera: Camera, params: DensityParams,
                 cfg: RenderConfig = RenderConfig(), seed=0) -> Image:
    """Render every pixel; chunk ``i`` draws from the stream seeded by ``(seed, i)``."""
    origins, dirs = camera_rays(camera)
    rgb = np.empty((len(origins), 3))
    for ci, start in enumerate(range(0, len(origins), cfg.chunk)):
        sl = slice(start, start + cfg.chunk)
        rng = np.random.default_rng([seed, ci])
        rgb[sl] = render_rays(udf, color, origins[sl], dirs[sl], params, cfg, rng).rgb
    return Image(camera.width, camera.height, rgb)


def to_bytes(img: Image) -> np.ndarray:
    return np.round(np.clip(img.rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: Image) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(to_bytes(img).tobytes())


def read_ppm(path) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit binary PPM (P6) is supported")
    width, height = int(tokens[1]), int(tokens[2])
    raw = np.frombuffer(data[pos + 1:pos + 1 + 3 * width * height], dtype=np.uint8)
    if raw.size != 3 * width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return Image(width, height, raw.reshape(height, width, 3) / 255.0)


def write_png(path, img: Image) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(to_bytes(img), mode="RGB").save(path)
