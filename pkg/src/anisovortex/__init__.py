"""Linear stability of the degree-one radial vortex of the anisotropic
Ginzburg-Landau equation.

Submodules
----------
grid          radial grids, r dr quadrature, finite differences
profile       vortex profile f0 and its rescalings
forms         mode-wise quadratic forms and the identities between them
spectrum      matrix pencils, smallest eigenpairs, verdicts, delta_1 bisection
certificates  explicit instability witnesses
cli           command-line entry point
"""

from anisovortex.grid import RadialGrid, RadialFunction, build_grid, integrate, differentiate
from anisovortex.profile import Profile, solve_profile, validate_profile, rescaled_profile

__all__ = [
    "RadialGrid",
    "RadialFunction",
    "build_grid",
    "integrate",
    "differentiate",
    "Profile",
    "solve_profile",
    "validate_profile",
    "rescaled_profile",
]

__version__ = "0.1.0"
