"""Multi-scale Stokes solver for pressure-driven flow through a periodic sieve.

The package meshes a channel pair joined through a thin layer of obstacles,
solves the Stokes equations there directly, solves the microscopic
boundary-layer problems on a periodic strip to extract homogenized interface
constants, builds the explicit first-order averaged approximation, and
measures how fast the approximation converges to the direct solution.
"""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    BoundaryTag,
    MacroGeometry,
    Mesh,
    ObstacleSpec,
    RefineSpec,
    build_macro_geometry,
    build_strip_mesh,
    no_stent_mesh,
    rectangle_mesh,
    triangulate,
)
from .cell import CellConstants, extract_constants, solve_all  # noqa: F401
from .homogenized import (  # noqa: F401
    FlowData,
    averaged_approximation,
    flowrate_formula,
    solve_first_order,
    zero_order,
)
from .solvers import SolverConfig, solve_poisson, solve_stokes  # noqa: F401
