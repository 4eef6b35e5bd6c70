"""Exception hierarchy shared by all pipeline stages."""


class StereotrapError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(StereotrapError):
    """Raster or map dimensions do not agree."""


class NonConvergence(StereotrapError):
    """An iterative solver failed to reach its tolerance."""


class DegenerateGeometry(StereotrapError):
    """Stereo rig geometry does not admit a rectification."""


class DegenerateConfiguration(StereotrapError):
    """Point correspondences are rank deficient."""


class InsufficientPoints(StereotrapError):
    """Fewer correspondences than the estimator requires."""


class LengthMismatch(StereotrapError):
    """Sequence lengths do not agree."""


class EmptySequence(StereotrapError):
    """Operation requires a longer input sequence."""


class NoValidDepth(StereotrapError):
    """Too few valid depth pixels under a detection region."""


class InvalidWindow(StereotrapError):
    """Truncation window or bin layout is not usable."""


class EmptyBins(StereotrapError):
    """Detection-function fit requires at least one observation."""


class OddWidth(StereotrapError):
    """Side-by-side frame width must be even."""
