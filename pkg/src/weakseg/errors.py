"""Exception hierarchy shared across the toolkit."""


class WeaksegError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(WeaksegError):
    """Array shape or arity does not match the expected contract."""


class ConfigError(WeaksegError):
    """Invalid or inconsistent configuration."""


class MissingFile(WeaksegError):
    """A manifest or checkpoint references a file that does not exist."""


class DuplicateId(WeaksegError):
    """Two records share a patch_id within one manifest."""


class LabelArityMismatch(WeaksegError):
    """A label vector's length does not match the taxonomy class count."""


class LayoutError(WeaksegError):
    """A dataset directory does not follow the documented layout."""


class EmptyLabel(WeaksegError):
    """A training patch carries an all-zero presence vector."""


class RoiTooSmall(WeaksegError):
    """An ROI is smaller than the requested crop size."""


class NumericalError(WeaksegError):
    """Non-finite values appeared where finite ones are required."""


class EmptyValidRegion(WeaksegError):
    """A loss or metric was asked to average over zero valid pixels."""


class MissingPseudoMask(WeaksegError):
    """The pseudo-mask store lacks an entry required for training."""


class AllChannelsClosed(WeaksegError):
    """The classification gate zeroed every probability channel."""


class ExtentTooSmall(WeaksegError):
    """A slide extent is smaller than one tile."""


class OutOfBounds(WeaksegError):
    """A tile window falls outside the slide extent."""


class UncoveredPixel(WeaksegError):
    """Stitching finished with pixels no tile ever covered."""


class EmptyEvaluation(WeaksegError):
    """Metric computation was requested on zero evaluated pixels."""


class TaxonomyMismatch(WeaksegError):
    """Two artifacts disagree on the class taxonomy."""


class EmptyEvaluationWarning(UserWarning):
    """Confusion counting saw no valid pixels; the matrix is all zero."""
