"""Finite-element electrostatics with interchangeable coordinate charts,
metric tensors, and material tensors.

The same physical problem can be posed under different {chart, metric,
material} triplets; swapping one member against compensating changes in the
others leaves the assembled system invariant. This package provides the
transformation algebra, simplicial meshes, a P1 Galerkin assembler, a
conjugate-gradient solver, and drivers for open boundaries, chart-based
reparameterization, and motion without remeshing.
"""

from . import applications, atlas, fem, geometry, mesh, solver, triplet
from .errors import TripletFemError

__version__ = "0.1.0"

__all__ = [
    "applications",
    "atlas",
    "fem",
    "geometry",
    "mesh",
    "solver",
    "triplet",
    "TripletFemError",
    "__version__",
]
