"""Unsigned distance fields: analytic open/closed primitives and trilinear grids.

Every field exposes ``value(p)`` and ``gradient(p)`` on arrays of shape
``(..., 3)``.  Grid fields clamp queries to their bounds, so rays that wander
outside never produce NaN.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

DEGENERATE_GRAD = 1e-6
FD_STEP = 1e-4
_TINY = np.finfo(np.float64).smallest_subnormal


def softplus(x, beta=100.0):
    """``ln(1 + exp(beta*x)) / beta`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    bx = beta * x
    return (np.maximum(bx, 0.0) + np.log1p(np.exp(-np.abs(bx)))) / beta


def softplus_grad(x, beta=100.0):
    """Derivative of :func:`softplus`: ``sigmoid(beta*x)``, positive for finite x.

    Where the true value is below the smallest double (``beta*x < -745``) the
    smallest positive subnormal is returned instead of an underflowed zero.
    """
    g = expit(beta * np.asarray(x, dtype=np.float64))
    return np.maximum(g, _TINY)


def hard_threshold(x):
    """``max(0, x)``: the non-smooth alternative to :func:`softplus`."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def hard_threshold_grad(x):
    """Derivative of :func:`hard_threshold`, taking 0 at ``x = 0``."""
    return (np.asarray(x, dtype=np.float64) > 0).astype(np.float64)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _plane_basis(normal):
    n = _unit(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = _unit(np.cross(n, helper))
    return u, np.cross(n, u), n


class Field:
    """Base class; subclasses implement ``value`` and usually ``gradient``."""

    kind = "field"

    def value(self, p):
        raise NotImplementedError

    def gradient(self, p):
        return finite_difference_gradient(self, p)


class ClosestPointField(Field):
    """Analytic UDF defined through a closest-point query."""

    kind = "analytic-primitive"

    def closest(self, p):
        raise NotImplementedError

    def value(self, p):
        p = np.asarray(p, dtype=np.float64)
        return np.linalg.norm(p - self.closest(p), axis=-1)

    def gradient(self, p):
        p = np.asarray(p, dtype=np.float64)
        diff = p - self.closest(p)
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        return diff / np.where(norm > 0, norm, 1.0)

    def sample_surface(self, n, rng):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SphereShell(ClosestPointField):
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    @property
    def area(self):
        return 4.0 * np.pi * self.radius ** 2

    def closest(self, p):
        c = np.asarray(self.center, dtype=np.float64)
        q = p - c
        r = np.linalg.norm(q, axis=-1, keepdims=True)
        fallback = np.array([0.0, 0.0, 1.0])
        dirn = np.where(r > 0, q / np.where(r > 0, r, 1.0), fallback)
        return c + self.radius * dirn

    def value(self, p):
        p = np.asarray(p, dtype=np.float64)
        return np.abs(np.linalg.norm(p - np.asarray(self.center), axis=-1) - self.radius)

    def sample_surface(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * v


@dataclass(frozen=True, eq=False)
class DiskOpen(ClosestPointField):
    """Flat disk with an open rim."""

    center: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    radius: float = 1.0

    @property
    def area(self):
        return np.pi * self.radius ** 2

    def closest(self, p):
        c = np.asarray(self.center, dtype=np.float64)
        n = _unit(self.normal)
        q = p - c
        radial = q - (q @ n)[..., None] * n
        rho = np.linalg.norm(radial, axis=-1, keepdims=True)
        scale = np.where(rho > self.radius, self.radius / np.where(rho > 0, rho, 1.0), 1.0)
        return c + radial * scale

    def sample_surface(self, n, rng):
        u, v, _ = _plane_basis(self.normal)
        r = self.radius * np.sqrt(rng.uniform(size=n))
        a = rng.uniform(0.0, 2.0 * np.pi, size=n)
        return (np.asarray(self.center) + (r * np.cos(a))[:, None] * u
                + (r * np.sin(a))[:, None] * v)


@dataclass(frozen=True, eq=False)
class RectPatch(ClosestPointField):
    """Planar rectangle; ``half_extents`` are measured along the in-plane basis."""

    center: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    half_extents: tuple = (0.5, 0.5)

    @property
    def area(self):
        return 4.0 * self.half_extents[0] * self.half_extents[1]

    def closest(self, p):
        c = np.asarray(self.center, dtype=np.float64)
        u, v, _ = _plane_basis(self.normal)
        q = p - c
        a = np.clip(q @ u, -self.half_extents[0], self.half_extents[0])
        b = np.clip(q @ v, -self.half_extents[1], self.half_extents[1])
        return c + a[..., None] * u + b[..., None] * v

    def sample_surface(self, n, rng):
        u, v, _ = _plane_basis(self.normal)
        a = rng.uniform(-self.half_extents[0], self.half_extents[0], size=n)
        b = rng.uniform(-self.half_extents[1], self.half_extents[1], size=n)
        return np.asarray(self.center) + a[:, None] * u + b[:, None] * v


@dataclass(frozen=True, eq=False)
class HemisphereShell(ClosestPointField):
    """Half of a sphere shell on the ``axis`` side; the equator is an open rim."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    axis: tuple = (0.0, 0.0, 1.0)

    @property
    def area(self):
        return 2.0 * np.pi * self.radius ** 2

    def closest(self, p):
        c = np.asarray(self.center, dtype=np.float64)
        a = _unit(self.axis)
        q = p - c
        h = (q @ a)[..., None]
        r = np.linalg.norm(q, axis=-1, keepdims=True)
        perp = q - h * a
        rho = np.linalg.norm(perp, axis=-1, keepdims=True)
        fallback = _plane_basis(a)[0]
        cap = np.where(r > 0, q / np.where(r > 0, r, 1.0), a)
        rim = np.where(rho > 0, perp / np.where(rho > 0, rho, 1.0), fallback)
        return c + self.radius * np.where(h >= 0, cap, rim)

    def sample_surface(self, n, rng):
        a = _unit(self.axis)
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        h = v @ a
        v -= 2.0 * np.minimum(h, 0.0)[:, None] * a
        return np.asarray(self.center) + self.radius * v


class Union(Field):
    """Pointwise minimum of several fields."""

    kind = "union"

    def __init__(self, parts):
        self.parts = list(parts)
        if not self.parts:
            raise ValueError("union needs at least one field")

    @property
    def area(self):
        return sum(p.area for p in self.parts)

    def _stack(self, p):
        return np.stack([f.value(p) for f in self.parts])

    def value(self, p):
        return self._stack(p).min(axis=0)

    def gradient(self, p):
        p = np.asarray(p, dtype=np.float64)
        which = self._stack(p).argmin(axis=0)
        grads = np.stack([f.gradient(p) for f in self.parts])
        return np.take_along_axis(grads, which[None, ..., None], axis=0)[0]

    def sample_surface(self, n, rng):
        areas = np.array([f.area for f in self.parts])
        counts = rng.multinomial(n, areas / areas.sum())
        pts = [f.sample_surface(k, rng) for f, k in zip(self.parts, counts) if k]
        return np.concatenate(pts)[rng.permutation(n)]


@dataclass(frozen=True, eq=False)
class ConstantField(Field):
    """Spatially constant distance; ``ConstantField(1.0)`` is an empty scene."""

    level: float = 1.0
    kind = "constant"

    def value(self, p):
        p = np.asarray(p, dtype=np.float64)
        return np.full(p.shape[:-1], float(self.level))

    def gradient(self, p):
        return np.zeros_like(np.asarray(p, dtype=np.float64))


class VoxelGrid(Field):
    """Trilinear interpolant of node values over an axis-aligned box.

    Values live in a flat x-fastest array (index ``ix + nx*(iy + ny*iz)``),
    which is also the on-disk order and the layout the optimizer updates.
    """

    kind = "voxel-grid"

    def __init__(self, values, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        self.resolution = tuple(int(s) for s in values.shape)
        self.lo = np.asarray(bounds[0], dtype=np.float64)
        self.hi = np.asarray(bounds[1], dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("grid bounds must have positive extent")
        self.data = values.ravel(order="F").copy()

    @classmethod
    def wrap(cls, data, resolution, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
        """Grid sharing an existing flat x-fastest ``data`` buffer (no copy)."""
        g = cls.__new__(cls)
        g.resolution = tuple(int(r) for r in resolution)
        g.lo = np.asarray(bounds[0], dtype=np.float64)
        g.hi = np.asarray(bounds[1], dtype=np.float64)
        if data.shape != (int(np.prod(g.resolution)),):
            raise ValueError("data does not match grid resolution")
        g.data = data
        return g

    @classmethod
    def full(cls, resolution, fill, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
        return cls(np.full(resolution, float(fill)), bounds)

    @classmethod
    def from_function(cls, fn, resolution, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
        return cls(fn(grid_nodes(resolution, bounds)), bounds)

    @property
    def values(self):
        return self.data.reshape(self.resolution, order="F")

    @property
    def spacing(self):
        return (self.hi - self.lo) / (np.asarray(self.resolution) - 1)

    def stencil(self, p, with_grad=True):
        """Corner indices, trilinear weights and weight gradients for points ``p``.

        Returns ``idx (..., 8)``, ``w (..., 8)`` and ``dw (..., 8, 3)`` where
        ``dw`` is the derivative of each weight with respect to position
        (``None`` unless ``with_grad``).  Clamped queries use the slope of the
        boundary cell.
        """
        p = np.asarray(p, dtype=np.float64)
        res = np.asarray(self.resolution)
        scale = (res - 1) / (self.hi - self.lo)
        u = np.clip((p - self.lo) * scale, 0.0, res - 1)
        i0 = np.minimum(np.floor(u).astype(np.int64), res - 2)
        fr = u - i0
        nx, ny = self.resolution[0], self.resolution[1]
        base = i0[..., 0] + nx * (i0[..., 1] + ny * i0[..., 2])
        idx, w, dw = [], [], []
        for c in range(2):
            for b in range(2):
                for a in range(2):
                    wx = fr[..., 0] if a else 1.0 - fr[..., 0]
                    wy = fr[..., 1] if b else 1.0 - fr[..., 1]
                    wz = fr[..., 2] if c else 1.0 - fr[..., 2]
                    sx, sy, sz = (1.0 if a else -1.0), (1.0 if b else -1.0), (1.0 if c else -1.0)
                    idx.append(base + a + nx * (b + ny * c))
                    w.append(wx * wy * wz)
                    if with_grad:
                        dw.append(np.stack([sx * scale[0] * wy * wz,
                                            sy * scale[1] * wx * wz,
                                            sz * scale[2] * wx * wy], axis=-1))
        return np.stack(idx, -1), np.stack(w, -1), (np.stack(dw, -2) if with_grad else None)

    def value(self, p):
        idx, w, _ = self.stencil(p, with_grad=False)
        return np.sum(self.data[idx] * w, axis=-1)

    def gradient(self, p):
        idx, _, dw = self.stencil(p)
        return np.einsum("...k,...kj->...j", self.data[idx], dw)


class SoftplusGrid(Field):
    """``softplus(trilinear(raw))``: a non-negative, everywhere-differentiable UDF."""

    kind = "softplus-grid"

    def __init__(self, grid: VoxelGrid, beta=100.0):
        if beta <= 0:
            raise ValueError("softplus beta must be positive")
        self.grid = grid
        self.beta = float(beta)

    def value(self, p):
        return softplus(self.grid.value(p), self.beta)

    def gradient(self, p):
        idx, w, dw = self.grid.stencil(p)
        vals = self.grid.data[idx]
        raw = np.sum(vals * w, axis=-1)
        return softplus_grad(raw, self.beta)[..., None] * np.einsum("...k,...kj->...j", vals, dw)


def grid_nodes(resolution, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
    """Node coordinates, shape ``resolution + (3,)``, indexed ``[ix, iy, iz]``."""
    axes = [np.linspace(bounds[0][k], bounds[1][k], resolution[k]) for k in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def eval_udf(field: Field, p):
    return field.value(p)


def eval_gradient(field: Field, p):
    return field.gradient(p)


def gradient_with_flag(field: Field, p):
    """Gradient plus a mask of points whose gradient norm is below ``DEGENERATE_GRAD``."""
    g = field.gradient(p)
    return g, np.linalg.norm(g, axis=-1) < DEGENERATE_GRAD


def finite_difference_gradient(field: Field, p, h=FD_STEP):
    p = np.asarray(p, dtype=np.float64)
    out = np.empty(p.shape)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        out[..., k] = (field.value(p + e) - field.value(p - e)) / (2.0 * h)
    return out


# Layout: b"UG", uint16 nx, ny, nz, float32 lo[3], hi[3]; then float64 values, x fastest.
_GRID_HEADER = struct.Struct("<2s3H6f")
GRID_MAGIC = b"UG"


def save_grid(path, grid: VoxelGrid) -> None:
    header = _GRID_HEADER.pack(GRID_MAGIC, *grid.resolution, *grid.lo, *grid.hi)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(grid.data.astype("<f8").tobytes())


def load_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        head = fh.read(_GRID_HEADER.size)
        if len(head) != _GRID_HEADER.size:
            raise ValueError(f"{path}: truncated grid header")
        magic, nx, ny, nz, *b = _GRID_HEADER.unpack(head)
        if magic != GRID_MAGIC:
            raise ValueError(f"{path}: bad grid magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nx * ny * nz:
        raise ValueError(f"{path}: expected {nx * ny * nz} values, found {data.size}")
    return VoxelGrid(data.reshape((nx, ny, nz), order="F"), (b[:3], b[3:]))
