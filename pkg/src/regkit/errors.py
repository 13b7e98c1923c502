"""Exception types raised across the toolkit."""


class RegkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(RegkitError):
    """A point-cloud file is malformed or uses an unsupported layout."""


class EmptyCloud(RegkitError):
    """An operation received or produced a cloud with zero points."""


class DegenerateInput(RegkitError):
    """Input geometry is rank-deficient (collinear / duplicate points)."""


class NoCorrespondences(RegkitError):
    """Descriptor matching produced no pairs; the caller should relax tau."""


class TooFewCorrespondences(RegkitError):
    """Fewer than three correspondences; robust registration cannot start."""


class RegistrationFailed(RegkitError):
    """The coarse registration pipeline could not produce a pose."""


class EmptyCrop(RegkitError):
    """No scene points fall inside the requested bounding box."""


class NoCorrespondencesInRange(RegkitError):
    """ICP found no neighbor within the maximum correspondence distance."""


class NonFiniteEnergy(RegkitError):
    """ICP energy became NaN/inf, usually a sign of a bad initial pose."""


class StaleFrame(RegkitError):
    """Frame timestamp is not newer than the tracker history."""


class TooFewPairs(RegkitError):
    """Fewer than three ground-truth/sensor pairs survived pairing."""


class EmptyNeighborhood(RegkitError):
    """No scene points lie within the profiling neighborhood."""


class OverlapUnachievable(RegkitError):
    """Half-space bisection could not reach the requested overlap ratio."""


class ConfigError(RegkitError):
    """Benchmark or CLI configuration file is invalid."""


class AlreadyCorrected(RegkitError):
    """A region correction was already applied to this cloud."""
