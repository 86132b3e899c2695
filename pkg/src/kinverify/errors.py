"""Exception hierarchy shared by all kinverify modules."""


class KinverifyError(Exception):
    """Base class for all library errors."""


class DataError(KinverifyError):
    """Malformed input data: manifests, media files, model files."""


class DimensionError(KinverifyError):
    """Input does not have the shape/size an operation requires."""


class NumericError(KinverifyError):
    """A numerical procedure failed (divergence, singular system)."""


class LeakageError(KinverifyError):
    """A fitting stage touched a test-fold recording."""
