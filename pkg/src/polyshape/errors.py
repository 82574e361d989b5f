"""Exception hierarchy shared by all modules."""


class PolyshapeError(Exception):
    """Base class for every error raised by this package."""


class SpecError(PolyshapeError):
    """Malformed geometry description or configuration."""


class GeometryError(PolyshapeError):
    """Invalid polygon geometry (self-intersection, overlap, ...)."""


class AdmissibilityError(PolyshapeError):
    """Partition violates the admissibility checks in strict mode."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PerturbationError(AdmissibilityError):
    """A perturbed partition is no longer admissible."""


class ArgumentError(PolyshapeError, ValueError):
    """Invalid numerical argument."""


class DomainError(PolyshapeError, ValueError):
    """Evaluation point outside the region where a result is guaranteed."""


class MeshError(PolyshapeError):
    """Mesh generation or conformity failure."""


class SolverError(PolyshapeError):
    """Iterative solver failed to converge."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class OracleError(PolyshapeError):
    """A perturbed solve inside the finite-difference oracle failed."""


class ConsistencyError(PolyshapeError):
    """Two independent evaluations of the same quantity disagree."""
