"""Ground states of the zero-mass Schrodinger-Bopp-Podolsky system.

Modules
-------
kernel       closed-form Coulomb, Yukawa and Bopp-Podolsky kernels
grid         radial and box grids, sampled fields, norms, fibering rescale
potential    phi = K * u^2 by exact radial reduction and by spectral convolution
bp_energy    the energy V(f, g), its oracle and functional inequalities
functionals  I_eps, P_eps, J_eps, first variation, fibering map
solver       fixed-eps ground states and eps -> 0 continuation
cli          batch command-line front end
"""
from .kernel import KernelParams
from .functionals import ProblemParams
from .grid import BoxGrid, RadialGrid

__version__ = "0.1.0"
__all__ = ["KernelParams", "ProblemParams", "RadialGrid", "BoxGrid", "__version__"]
