"""Potential of a Gaussian charge: closed form, radial solver and box solver side by side.

Run with ``python3 demos/potentials.py``.
"""
import time

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erf, erfc

from bopo.grid import BoxGrid, RadialGrid
from bopo.kernel import KernelParams
from bopo.potential import energy_identity_gap, pde_residual, solve_potential_box, solve_potential_radial


def closed_form(r, a):
    b = 1 / (2 * a)
    yuk = np.exp(b * b) * (np.exp(-r / a) * erfc(b - r) - np.exp(r / a) * erfc(b + r))
    return np.pi**1.5 / r * (erf(r) - 0.5 * yuk)


def main():
    p = KernelParams(a=1.0)
    radial = RadialGrid(2048)
    src = radial.sample(lambda r: np.exp(-r * r))
    t0 = time.perf_counter()
    pot = solve_potential_radial(src, p)
    print(f"radial solve: {1e3 * (time.perf_counter() - t0):.1f} ms, residual {pde_residual(pot, src):.2e}, "
          f"energy identity gap {energy_identity_gap(pot, src):.2e}")

    print("\n     r      radial            closed form       Coulomb pi^1.5/r")
    for r0 in (0.01, 0.5, 1.0, 2.0, 5.0, 20.0):
        i = np.argmin(abs(radial.r - r0))
        r = radial.r[i]
        print(f"{r:8.4f}  {pot.values[i]:.14f}  {closed_form(r, p.a):.14f}  {np.pi**1.5 / r:.6f}")
    print("bounded at the origin, Coulombic far away")

    box = BoxGrid(64, 8.0)
    bsrc = box.sample(lambda r: np.exp(-r * r))
    t0 = time.perf_counter()
    bpot = solve_potential_box(bsrc, p)
    wall = time.perf_counter() - t0
    ref = CubicSpline(radial.r_ext, radial.extend(pot.values))(box.radius())
    print(f"\nbox 64^3 solve: {wall:.2f} s, residual {pde_residual(bpot, bsrc):.2e}, "
          f"max |box - radial| / max = {np.max(abs(bpot.values - ref)) / ref.max():.2e}")


if __name__ == "__main__":
    main()
