"""Adaptive hierarchical sampling versus fixed-rate sampling on a plane at s = 2000.

Both schedules share the uniform pass, so the difference shows in the samples placed
closest to the surface.

    python demos/ahs_concentration.py
"""

from udfr.sampling import ahs_schedule
from udfr.verify import ahs_concentration


def main():
    print("per-pass sharpness for k = 4:")
    for s in (100.0, 512.0, 2000.0):
        print(f"  s = {s:6.0f}:", [ahs_schedule(i, 4, s) for i in range(1, 5)])
    for q in (0.1, 0.25, 0.5, 1.0):
        on, off = ahs_concentration(s=2000.0, quantile=q)
        print(f"closest {q:4.0%} of samples: mean |t - t0| on {on:.5f}  off {off:.5f}  "
              f"ratio {on / off:.2f}")


if __name__ == "__main__":
    main()
