"""Exception types shared across the package."""


class QuenchMeshError(Exception):
    """Base class for all package errors."""


class DomainError(QuenchMeshError):
    """Argument outside the mathematical domain of an operation."""


class SolveError(QuenchMeshError):
    """A linear or nonlinear solve failed (singular system, bad truncation)."""


class MeshGenError(QuenchMeshError):
    """Mesh generation failed at the requested resolution."""


class DegenerateElement(QuenchMeshError):
    """Element with (near-)zero or negative area encountered."""


class OutsideMesh(QuenchMeshError):
    """Query point not contained in any mesh element."""


class RankError(QuenchMeshError):
    """Least-squares patch is rank deficient even after extension."""


class ResolutionError(QuenchMeshError):
    """Background grid too coarse to resolve the domain features."""


class EmptyResult(QuenchMeshError):
    """Query has no solution (e.g. level set beyond the inradius)."""


class NoArrival(QuenchMeshError):
    """Boundary layers never reach the skeleton before quenching."""


class MeshTangled(QuenchMeshError):
    """Mesh update produced an element with nonpositive area."""


class NewtonDivergence(QuenchMeshError):
    """Newton iteration failed to converge after maximum retries."""


class QuenchReached(QuenchMeshError):
    """Touchdown threshold crossed; the integrator must stop.

    Carries the state at detection so callers can report it.
    """

    def __init__(self, message="quench threshold reached", t=None, min_u=None):
        super().__init__(message)
        self.t = t
        self.min_u = min_u
