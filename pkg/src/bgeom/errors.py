class GeometryError(Exception):
    """Base class for all errors raised by bgeom."""


class DomainError(GeometryError, ValueError):
    """A point lies outside the coordinate domain."""


class CapabilityError(GeometryError):
    """A requested derivative order exceeds what the metric can provide."""


class DegeneracyError(GeometryError, ValueError):
    """A metric or matrix is singular or not positive definite."""


class ShapeError(GeometryError, ValueError):
    """Tensor valence or component shape mismatch."""


class StiffnessError(GeometryError):
    """The adaptive integrator could not make progress."""


class InversionError(GeometryError):
    """Newton inversion of a chart did not converge."""


class RadiusError(GeometryError):
    """A chart radius reaches a conjugate or focal point."""


class CoverageError(GeometryError):
    """A cover fails to cover the sampled domain."""

    def __init__(self, message, uncovered=None):
        super().__init__(message)
        self.uncovered = [] if uncovered is None else uncovered
