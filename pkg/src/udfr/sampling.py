"""Stratified, importance and adaptive hierarchical sampling along rays.

The ``*_batch`` functions operate on ``(n_rays, n_samples)`` arrays and are
what the renderer and the fitting loop use.  The single-ray functions wrap
them for the :class:`RaySamples` record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .density import DensityParams
from .geometry import Ray


@dataclass(frozen=True)
class SamplingConfig:
    n0: int = 64
    per_iter: int = 16
    k: int = 4
    ahs: bool = True
    deterministic: bool = False

    def __post_init__(self):
        if self.n0 < 2:
            raise ValueError("need at least 2 initial samples")
        if self.k < 0 or self.per_iter < 0:
            raise ValueError("k and per_iter must be non-negative")

    @property
    def total(self):
        return self.n0 + self.k * self.per_iter


# Full-scale schedule: 64 + 4 * 112 = 512 samples per ray.
FULL_SCALE_SAMPLING = SamplingConfig(n0=64, per_iter=112, k=4)


@dataclass
class RaySamples:
    """Ordered samples on one ray, plus per-sample quantities once populated."""

    ray: Ray
    t: np.ndarray
    delta: np.ndarray
    f: np.ndarray | None = None
    grad: np.ndarray | None = None
    sigma: np.ndarray | None = None
    alpha: np.ndarray | None = None
    T: np.ndarray | None = None
    w: np.ndarray | None = None

    @property
    def points(self):
        return self.ray.at(self.t)

    def __len__(self):
        return len(self.t)


def segment_lengths(t, far):
    """``t[i+1] - t[i]``, with the last segment running to ``far``."""
    t = np.asarray(t, dtype=np.float64)
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), t.shape[:-1])
    delta = np.concatenate([np.diff(t, axis=-1), (far - t[..., -1])[..., None]], axis=-1)
    return np.maximum(delta, 1e-12)


def ahs_schedule(i, k, s_current):
    """Sharpness used to estimate weights in sampling iteration ``i`` (1-based)."""
    if not 1 <= i <= k:
        raise ValueError(f"iteration {i} outside 1..{k}")
    if s_current <= 0:
        raise ValueError("s must be positive")
    return max(32.0 * 2.0 ** i, s_current / 2.0 ** (k - i))


def fixed_schedule(i):
    return 32.0 * 2.0 ** i


def ahs_active(s_current, k):
    """AHS departs from the fixed schedule once ``s > 64 * 2^(k-1)``."""
    return s_current > 64.0 * 2.0 ** (k - 1)


def _strictly_increasing(t):
    n = t.shape[-1]
    span = np.abs(t[..., -1:] - t[..., :1]) + 1.0
    eps = 1e-12 * span * np.arange(n)
    return np.maximum.accumulate(t - eps, axis=-1) + eps


def uniform_samples_batch(near, far, n, rng=None, deterministic=False):
    """One draw per equal-width bin of ``[near, far]``; bin midpoints when deterministic."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    near = np.asarray(near, dtype=np.float64)[..., None]
    far = np.asarray(far, dtype=np.float64)[..., None]
    width = (far - near) / n
    if deterministic:
        u = np.full((1, n), 0.5)
    else:
        u = rng.uniform(size=near.shape[:-1] + (n,))
    return near + (np.arange(n) + u) * width


def _inverse_cdf(edges, weights, m, rng, deterministic):
    """Draw ``m`` values per row from the piecewise-constant density on ``edges``."""
    n_rays, n_seg = weights.shape
    widths = edges[:, 1:] - edges[:, :-1]
    weights = np.where(weights > 0, weights, 0.0)
    total = weights.sum(axis=1, keepdims=True)
    empty = total[:, 0] <= 0
    if np.any(empty):
        weights = np.where(empty[:, None], widths, weights)
        total = weights.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((n_rays, 1)), np.cumsum(weights / total, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    if deterministic:
        u = np.broadcast_to((np.arange(m) + 0.5) / m, (n_rays, m))
    else:
        u = rng.uniform(size=(n_rays, m))
    offset = 2.0 * np.arange(n_rays)[:, None]
    flat = np.searchsorted((cdf + offset).ravel(), (u + offset).ravel(), side="right")
    idx = flat.reshape(n_rays, m) - 1 - (n_seg + 1) * np.arange(n_rays)[:, None]
    idx = np.clip(idx, 0, n_seg - 1)
    lo_c = np.take_along_axis(cdf, idx, 1)
    hi_c = np.take_along_axis(cdf, idx + 1, 1)
    denom = hi_c - lo_c
    frac = np.where(denom > 0, (u - lo_c) / np.where(denom > 0, denom, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    return np.take_along_axis(edges, idx, 1) + frac * np.take_along_axis(widths, idx, 1)


def importance_resample_batch(t, far, weights, m, rng=None, deterministic=False):
    """Draw ``m`` new arc lengths per ray from per-segment ``weights``.

    Segment ``i`` spans ``[t[i], t[i+1]]`` (the last one ends at ``far``).
    Rows whose weights are all zero fall back to length-proportional
    (uniform) sampling.  Only the new values are returned, unsorted.
    """
    t = np.asarray(t, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    edges = np.concatenate([t, far], axis=1)
    return _inverse_cdf(edges, np.asarray(weights, dtype=np.float64), m, rng, deterministic)


def merge_sorted(t, extra, *values):
    """Merge ``extra`` samples into ``t`` (and companion arrays) and sort per row."""
    out_t = np.concatenate([t, extra[0]], axis=1)
    order = np.argsort(out_t, axis=1, kind="stable")
    merged = [np.take_along_axis(out_t, order, 1)]
    for v, e in zip(values, extra[1:]):
        merged.append(np.take_along_axis(np.concatenate([v, e], axis=1), order, 1))
    return merged


def estimate_weights(t, f, far, s, c):
    """Coarse per-segment weights used only to place new samples.

    Each segment's distance is taken as the 1-Lipschitz lower bound
    ``(f_i + f_{i+1} - delta) / 2`` (clipped to the endpoint minimum and to 0),
    so a surface crossed between two samples is still detected.
    """
    delta = segment_lengths(t, far)
    f_lo = np.minimum(f[:, :-1], f[:, 1:])
    f_lip = 0.5 * (f[:, :-1] + f[:, 1:] - delta[:, :-1])
    f_seg = np.concatenate([np.maximum(np.minimum(f_lo, f_lip), 0.0), f[:, -1:]], axis=1)
    sigma = c * s * expit(-s * f_seg)
    alpha = 1.0 - np.exp(-sigma * delta)
    trans = np.cumprod(np.concatenate([np.ones_like(alpha[:, :1]), 1.0 - alpha[:, :-1]], 1), 1)
    return trans * alpha


def _draw_uniforms(n_rays, cfg: SamplingConfig, rng):
    """Stratum offsets and inverse-CDF draws, in the order the numpy path consumes them."""
    if cfg.deterministic:
        u0 = np.full((n_rays, cfg.n0), 0.5)
        u_imp = np.broadcast_to((np.arange(cfg.per_iter) + 0.5) / cfg.per_iter,
                                (n_rays, cfg.k, cfg.per_iter)).copy()
        return u0, u_imp
    u0 = rng.uniform(size=(n_rays, cfg.n0))
    u_imp = np.empty((n_rays, cfg.k, cfg.per_iter))
    for i in range(cfg.k):
        u_imp[:, i] = rng.uniform(size=(n_rays, cfg.per_iter))
    return u0, u_imp


def sharpness_schedule(params: DensityParams, cfg: SamplingConfig):
    return np.array([ahs_schedule(i, cfg.k, params.s) if cfg.ahs else fixed_schedule(i)
                     for i in range(1, cfg.k + 1)], dtype=np.float64)


def hierarchical_sample_batch(udf, origins, dirs, near, far, params: DensityParams,
                              cfg: SamplingConfig, rng=None, engine="auto"):
    """Uniform pass followed by ``k`` importance passes of ``per_iter`` samples.

    ``udf`` is a field (anything with ``value(points)``).  Returns ``(t, f)``
    sorted along each ray, each of shape ``(n_rays, n0 + k * per_iter)``.
    Softplus grids use the compiled kernel unless ``engine="numpy"``; both
    consume the random stream identically.
    """
    from .fields import SoftplusGrid

    if rng is None and not cfg.deterministic:
        rng = np.random.default_rng(0)
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    if engine == "auto":
        engine = "numba" if isinstance(udf, SoftplusGrid) and cfg.per_iter > 0 else "numpy"
    if engine == "numba":
        from ._kernels import hierarchical_sample_grid

        grid = udf.grid
        u0, u_imp = _draw_uniforms(len(origins), cfg, rng)
        scale = (np.asarray(grid.resolution) - 1) / (grid.hi - grid.lo)
        return hierarchical_sample_grid(grid.data, np.asarray(grid.resolution, np.int64),
                                        grid.lo, scale, udf.beta, origins, dirs, near, far,
                                        sharpness_schedule(params, cfg), params.c, cfg.n0,
                                        cfg.per_iter, u0, u_imp)
    t = uniform_samples_batch(near, far, cfg.n0, rng, cfg.deterministic)
    f = udf.value(origins[:, None, :] + t[..., None] * dirs[:, None, :])
    sched = sharpness_schedule(params, cfg)
    for i in range(cfg.k):
        if cfg.per_iter == 0:
            break
        w = estimate_weights(t, f, far, sched[i], params.c)
        t_new = importance_resample_batch(t, far, w, cfg.per_iter, rng, cfg.deterministic)
        f_new = udf.value(origins[:, None, :] + t_new[..., None] * dirs[:, None, :])
        t, f = merge_sorted(t, (t_new, f_new), f)
    return _strictly_increasing(t), f


def uniform_samples(ray: Ray, n, rng=None, deterministic=False) -> RaySamples:
    if rng is None and not deterministic:
        rng = np.random.default_rng()
    t = uniform_samples_batch([ray.t_near], [ray.t_far], n, rng, deterministic)[0]
    return RaySamples(ray, t, segment_lengths(t, ray.t_far))


def importance_resample(samples: RaySamples, weights, m, rng=None,
                        deterministic=False) -> RaySamples:
    if rng is None and not deterministic:
        rng = np.random.default_rng()
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    new = importance_resample_batch(samples.t[None], [samples.ray.t_far], weights[None],
                                    m, rng, deterministic)
    t = _strictly_increasing(np.sort(np.concatenate([samples.t, new[0]])))
    return RaySamples(samples.ray, t, segment_lengths(t, samples.ray.t_far))


def hierarchical_sample(field, ray: Ray, params: DensityParams, n0=64, per_iter=16, k=4,
                        ahs=True, rng=None, deterministic=False) -> RaySamples:
    cfg = SamplingConfig(n0=n0, per_iter=per_iter, k=k, ahs=ahs, deterministic=deterministic)
    t, f = hierarchical_sample_batch(field, ray.origin[None], ray.direction[None],
                                     np.array([ray.t_near]), np.array([ray.t_far]),
                                     params, cfg, rng)
    return RaySamples(ray, t[0], segment_lengths(t[0], ray.t_far), f=f[0])

