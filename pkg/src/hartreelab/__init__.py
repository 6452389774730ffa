"""Numerical study of mass-critical Hartree minimizers in steep potential wells.

Modules
-------
grid          box and radial discretizations, Riesz convolution
potentials    well families and their validation
functionals   energies, inequality quotients, virial residuals
solve         normalized gradient flows and trial families
groundstate   the ground state ``Q`` and the critical mass ``N*``
threshold     existence threshold ``lambda*(N)`` and the phase diagram
asymptotics   deep-well limit, lambda sweeps, profile rescaling
config, storage, cli
              run configuration, persistence and the command line
"""

from ._accel import BACKEND
from .grid import Field, GridSpec, RadialField, RadialGrid, make_grid
from .groundstate import GroundState, compute_Q
from .potentials import Potential, make_potential

__version__ = "0.1.0"

__all__ = ["BACKEND", "Field", "GridSpec", "RadialField", "RadialGrid", "make_grid",
           "GroundState", "compute_Q", "Potential", "make_potential", "__version__"]
