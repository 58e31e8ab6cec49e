"""Exception types shared across the package."""


class MetricBenchError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVector(MetricBenchError):
    """A vector with (near-)zero norm cannot be normalized."""


class DimMismatch(MetricBenchError):
    """Operand dimensionalities are incompatible."""


class ShapeMismatch(MetricBenchError):
    """Array shapes do not line up."""


class KTooLarge(MetricBenchError):
    """Requested k exceeds what the reference set can provide."""


class BadDim(MetricBenchError):
    """A target dimensionality is out of its valid range."""


class DegenerateData(MetricBenchError):
    """Numerical routine failed on degenerate input."""


class DegenerateSeries(MetricBenchError):
    """A series is too short or constant for the requested statistic."""


class LengthMismatch(MetricBenchError):
    """Paired sequences have different lengths."""


class InsufficientNeighbors(MetricBenchError):
    """A ranking holds fewer neighbors than the metric requires."""


class NoPairs(MetricBenchError):
    """Batch contains no valid pairs for a pair-based loss."""


class NoTriplets(MetricBenchError):
    """Batch contains no valid triplets for a triplet-based loss."""


class NoPositives(MetricBenchError):
    """No anchor in the batch has a positive."""


class NoNegatives(MetricBenchError):
    """No negatives available for sampling."""


class UnknownKind(MetricBenchError):
    """Unrecognized loss/miner identifier."""


class UnknownClass(MetricBenchError):
    """Batch label has no column in the class-weight matrix."""


class KinkProximity(MetricBenchError):
    """Gradient check rejected: configuration too close to a non-smooth point."""


class GradientMismatch(MetricBenchError):
    """Analytic gradient disagrees with finite differences beyond tolerance."""


class TooFewClasses(MetricBenchError):
    """Not enough classes for the requested split or batch."""


class StaleCache(MetricBenchError):
    """Backward called with caches from a non-matching forward."""


class DisjointnessViolation(MetricBenchError):
    """Train/validation/test class sets overlap."""


class NonFiniteLoss(MetricBenchError):
    """Training aborted on a NaN/Inf loss or gradient."""


class EmptySpace(MetricBenchError):
    """Hyperparameter space has no dimensions."""


class SeparationInfeasible(MetricBenchError):
    """Could not place class centers at the requested separation."""


class ParseError(MetricBenchError):
    """Configuration file could not be parsed."""


class ValidationError(MetricBenchError):
    """Configuration value failed validation; message names the field."""


class IoError(MetricBenchError):
    """File could not be read or written."""
