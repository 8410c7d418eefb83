"""Where the rendering weight peaks in front of a plane, and how opaque one crossing is.

Prints the closed-form offset ln(-c/cos)/s next to the peak of a fine numerical weight
profile, for several incidence angles, and the residual transmittance after a head-on pass.

    python demos/density_bias.py
"""

import numpy as np
from scipy.integrate import cumulative_trapezoid

from udfr.density import (DensityParams, max_weight_offset, modified_density,
                          perpendicular_pass_transparency)


def numerical_offset(params, theta_deg, n=20_000):
    cos = np.cos(np.radians(theta_deg))
    t0 = 30.0 / params.s / abs(cos)
    t = np.linspace(0.0, t0, n)
    f = (t0 - t) * abs(cos)
    sigma = modified_density(f, params)
    w = np.exp(-cumulative_trapezoid(sigma, t, initial=0.0)) * sigma
    return f[np.argmax(w)]


def main():
    for s in (1000.0, 2000.0):
        p = DensityParams(s=s, c=5.0)
        print(f"s = {s:.0f}, c = {p.c:g}")
        print("  theta   closed form   numerical")
        for theta in (91.0, 120.0, 150.0, 180.0):
            closed = float(max_weight_offset(p, np.cos(np.radians(theta))))
            print(f"  {theta:5.0f}   {closed:.6f}      {numerical_offset(p, theta):.6f}")
    for c in (2.0, 5.0, 10.0):
        T = perpendicular_pass_transparency(DensityParams(s=1000.0, c=c))
        print(f"head-on pass transparency, c = {c:g}: {T:.3e}")


if __name__ == "__main__":
    main()
