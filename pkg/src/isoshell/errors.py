"""Exception and warning types shared across the toolkit."""


class IsoshellError(Exception):
    """Base class for all toolkit errors."""


# geometry / meshing

class EmptySurface(IsoshellError):
    """The implicit surface has no zero crossing inside the requested domain."""


class NonManifold(IsoshellError):
    """Mesh violates edge-manifoldness (an interior edge with degree != 2)."""


class WeldFailure(IsoshellError):
    """Vertices expected to coincide on a mirror/tile interface failed to pair."""


class MalformedFile(IsoshellError):
    """A mesh file could not be parsed.

    Carries ``offset`` (byte position of the failure) when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


# shell FEA

class DegenerateElement(IsoshellError):
    """Triangle too small or collinear to support a shell element."""


class UntaggedBoundary(IsoshellError):
    """A boundary node carries no bounding-plane tag; constraints undefined."""


class ConstraintConflict(IsoshellError):
    """A DOF was prescribed twice with different values."""


class SingularSystem(IsoshellError):
    """The constrained stiffness matrix is singular (insufficient constraints)."""


class IllConditionedWarning(UserWarning):
    """Condition estimate of the reduced system exceeds the trust threshold."""


# homogenization

class ConsistencyFailure(IsoshellError):
    """Hydrostatic/uniaxial cross-check of the elasticity constants failed."""


class DegenerateConstants(IsoshellError):
    """c11 == c12 within tolerance; anisotropy index undefined."""


class UnstableTensor(IsoshellError):
    """Elasticity constants violate the cubic stability inequalities."""


# optimization

class MissingEnergySplit(IsoshellError):
    """Load-case solution lacks per-element membrane/bending energies."""


class MissingDomainMap(IsoshellError):
    """Mesh has no fundamental-domain copy map; symmetry averaging impossible."""


class NonConvergence(IsoshellError):
    """Optimizer hit the iteration cap before reaching the tolerance.

    ``state`` holds the best-so-far optimization state.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class BoundsSaturatedWarning(UserWarning):
    """More than 90% of the thickness variables sit on a bound."""


# thickening / solids

class IsolatedVertex(IsoshellError):
    """Vertex has no incident triangle; nodal thickness undefined."""


class OpenBoundary(IsoshellError):
    """A mid-surface boundary edge lies on no tagged plane."""


class SelfIntersection(IsoshellError):
    """Offset solid intersects itself.

    ``pairs`` lists offending triangle index pairs.
    """

    def __init__(self, message, pairs=None):
        super().__init__(message)
        self.pairs = pairs or []


class NotWatertight(IsoshellError):
    """Solid mesh has edges with degree != 2."""


# post-processing

class SchemaError(IsoshellError):
    """Input table lacks the required columns."""


class NonMonotoneSegmentWarning(UserWarning):
    """Strain decreases inside a loading segment."""


class InconsistentStiffness(IsoshellError):
    """Machine stiffness too low for the measured combined slope."""


class InsufficientRange(IsoshellError):
    """Curve does not cover the strain range required by the analysis."""


class ZeroStress(IsoshellError):
    """Stress is zero where a division by stress is required."""
