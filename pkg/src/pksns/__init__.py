"""Pseudo-spectral toolkit for the Patlak-Keller-Segel-Navier-Stokes system near Couette flow.

Modules
-------
field           grids, transforms, projections, derivatives and norms
elliptic        Helmholtz and Neumann-Poisson solvers, pressure pieces
dynamics        parameters, state, right-hand sides and the time stepper
decomposition   velocity <-> (omega2, Delta u2) transformations
diagnostics     energy functionals, bound checks, decay fits, inequality catalog
inequalities    variational lower bounds for the Gagliardo-Nirenberg constant
harness         configuration, scenarios, checkpoints, runners and the CLI
"""
from .dynamics import Params, State, make_state, step
from .field import Grid, PhysicalField, SpectralField

__version__ = "0.1.0"

__all__ = ["Grid", "Params", "PhysicalField", "SpectralField", "State", "make_state", "step", "__version__"]
