"""Fixed-eps ground state and the certificates that come with it.

The solver enforces the constraint J_eps = 0; the Pohozaev functional
P_eps is never used by the iteration, so its smallness at the end is an
independent check. Run with ``python3 demos/ground_state.py`` (about a
minute on one core).
"""
import time

import numpy as np

from bopo.functionals import ProblemParams, fibering_maximize
from bopo.grid import RadialGrid, tail_fraction
from bopo.kernel import KernelParams
from bopo.solver import SolverConfig, default_init, solve_fixed_eps, weak_residual


def main():
    pp = ProblemParams(KernelParams(a=1.0, q=1.0), p=4.0, epsilon=1.0)
    grid = RadialGrid(2048)
    t0 = time.perf_counter()
    st = solve_fixed_eps(default_init(grid), pp, SolverConfig())
    b = st.breakdown
    print(f"{st.message} after {st.iterations} iterations in {time.perf_counter() - t0:.0f} s")
    print(f"m_eps = I_eps(u) = {b.I_eps:.12f}")
    print(f"gradient residual {st.residual_grad:.2e}, |J| {st.residual_J:.2e}, "
          f"|P|/scale {st.pohozaev_relative:.2e} (not enforced)")
    print(f"weak residual {weak_residual(st.u, pp):.2e}, tail mass {tail_fraction(st.u):.1e}, "
          f"min u {st.min_u:.1e}")
    print(f"fibering maximiser at the solution: t* = {fibering_maximize(st.u, pp).t_star:.12f}")
    print("\n   r      u(r)")
    for r0 in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0):
        i = np.argmin(abs(grid.r - r0))
        print(f"{grid.r[i]:6.3f}  {st.u.values[i]:.6e}")


if __name__ == "__main__":
    main()
