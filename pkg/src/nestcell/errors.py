"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, geometry/trace failures with 3, estimator failures with 4.
"""


class NestcellError(Exception):
    """Base class for all package errors."""


class ConfigError(NestcellError):
    """A configuration file or parameter set could not be parsed/validated."""


class GeometryError(NestcellError):
    """Ray tracing or cell-geometry failure."""


class NoIntersection(GeometryError):
    """A ray does not intersect the requested mirror surface."""


class UnstableCell(GeometryError):
    """Mirror separation outside the (0, R) stability interval."""


class DegeneratePattern(GeometryError):
    """Ring clustering is ambiguous at the configured tolerance."""


class NoValidInjection(GeometryError):
    """The injection search found no orbit satisfying the constraints."""


class NonphysicalBeam(GeometryError):
    """Gaussian beam parameter left the physical half-plane (Im q <= 0)."""


class NoExit(GeometryError):
    """Operation requires a trace that exited through the exit pupil."""


class OutOfBand(NestcellError):
    """Wavelength outside the support of the coating curve."""


class EstimatorError(NestcellError):
    """Tomography / fitting failure."""


class SingularDesign(EstimatorError):
    """Measurement settings are not informationally complete (or data degenerate)."""


class FitFailure(EstimatorError):
    """Least-squares fit on degenerate data."""


class InconsistentData(EstimatorError):
    """Process-tomography residual exceeded the configured bound."""


class ZeroTrace(EstimatorError):
    """Channel output trace underflowed; state cannot be renormalized."""


class DimensionMismatch(EstimatorError):
    """Operands have incompatible Hilbert-space dimensions."""


class NormalizationMismatch(EstimatorError):
    """Process matrices use different normalization conventions."""
