"""Exception types raised across the package."""


class StentflowError(Exception):
    """Base class for all package errors."""


class NonIntegerReciprocal(StentflowError):
    """eps is not the reciprocal of an integer."""


class ObstacleTouchesCell(StentflowError):
    """Obstacle closure is not strictly inside its periodicity cell."""


class MeshQualityFailure(StentflowError):
    """Generated mesh violates the minimum-angle threshold."""


class PeriodicMismatch(StentflowError):
    """Left/right strip boundary traces do not match."""


class ConflictingConstraints(StentflowError):
    """Two boundary conditions disagree at a shared DOF."""


class UnassembledTag(StentflowError):
    """A boundary tag has no boundary-condition assignment."""


class PointLocationFailure(StentflowError):
    """A query point could not be located inside a mesh."""


class NonConvergence(StentflowError):
    """Iterative solver exhausted its iteration budget."""


class SingularSystem(StentflowError):
    """Iterative solver detected an indefinite or singular operator."""


class MeshMismatch(StentflowError):
    """Two solutions expected on the same mesh live on different meshes."""


class CompatibilityFailure(StentflowError):
    """Dirichlet data violates the divergence-free compatibility condition."""


class ConfigError(StentflowError):
    """Invalid or unknown configuration input."""
