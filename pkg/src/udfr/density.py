"""Density, transparency and bias formulas for UDF volume rendering.

Angle convention: ``cos_theta = (grad f / |grad f|) . d`` for the unit ray
direction ``d``, so a point in front of a surface the ray is heading into
has ``cos_theta < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

DEFAULT_C = 5.0
DEFAULT_BETA = 100.0


@dataclass(frozen=True)
class DensityParams:
    s: float = 1000.0
    c: float = DEFAULT_C
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"sharpness s must be positive, got {self.s}")
        if not self.c > 1:
            raise ValueError(f"opacity constant c must exceed 1, got {self.c}")
        if not self.beta > 0:
            raise ValueError(f"softplus beta must be positive, got {self.beta}")


def _check_s(s):
    if np.any(np.asarray(s) <= 0):
        raise ValueError("sharpness s must be positive")


def bell(f, s):
    """``s * e^{-sf} / (1 + e^{-sf})`` evaluated as ``s * sigmoid(-s f)``."""
    return s * expit(-s * np.asarray(f, dtype=np.float64))


def theoretical_density(f, cos_theta, s):
    """Unbiased bell-shaped density, scaled by ``|cos_theta|``."""
    _check_s(s)
    return bell(f, s) * np.abs(cos_theta)


def modified_density(f, params: DensityParams):
    """Bell density with the angular term replaced by the constant ``c``."""
    return params.c * bell(f, params.s)


def modified_density_s(f, s, c=DEFAULT_C):
    return c * bell(f, s)


def neus_logistic_density(x, s):
    """Logistic density ``s e^{-sx} / (1 + e^{-sx})^2`` (symmetric in x)."""
    _check_s(s)
    sig = expit(-s * np.asarray(x, dtype=np.float64))
    return s * sig * (1.0 - sig)


def planar_transparency(f0, ft, s):
    """Transmittance in front of a plane under the theoretical density.

    ``f0`` is the distance at the ray start, ``ft`` at the queried point:
    ``(1 + e^{-s f0}) / (1 + e^{-s ft})``.
    """
    _check_s(s)
    f0 = np.asarray(f0, dtype=np.float64)
    ft = np.asarray(ft, dtype=np.float64)
    return np.exp(np.log1p(np.exp(-s * f0)) - np.log1p(np.exp(-s * ft)))


def max_weight_offset(params: DensityParams, cos_theta):
    """Distance value at which the weight of ``modified_density`` peaks: ``ln(-c/cos)/s``."""
    cos_theta = np.asarray(cos_theta, dtype=np.float64)
    if np.any(cos_theta >= 0) or np.any(cos_theta < -1):
        raise ValueError("cos_theta must lie in [-1, 0) for a point in front of the surface")
    return np.log(-params.c / cos_theta) / params.s


def perpendicular_pass_transparency(params: DensityParams):
    """Residual transmittance ``((1 + e^{-s}) / 2)^{2c}`` after crossing a plane head-on."""
    return float(np.exp(2.0 * params.c * (np.log1p(np.exp(-params.s)) - np.log(2.0))))


def offset_range(params: DensityParams, theta_min_deg=91.0, theta_max_deg=180.0):
    """Smallest and largest bias offset over incidence angles in the given range."""
    lo = max_weight_offset(params, np.cos(np.radians(theta_max_deg)))
    hi = max_weight_offset(params, np.cos(np.radians(theta_min_deg)))
    return float(lo), float(hi)
