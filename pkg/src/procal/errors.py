"""Exception types shared across the package."""


class ProcalError(Exception):
    """Base class for all errors raised by this package."""


class FewerThanThreePoints(ProcalError):
    """Fewer than three usable points; a 2D similarity fit would be unstable."""


class DegenerateShape(ProcalError):
    """Point configuration leaves the similarity transform undefined."""


class MissingAxisPoints(ProcalError):
    """Nose or hip keypoints needed for the torso axis are not visible."""


class EmptyShape(ProcalError):
    """A keypoint set has no visible points."""


class DimensionMismatch(ProcalError):
    """Array or raster operands have incompatible shapes."""


class NoFeasibleCandidate(ProcalError):
    """No keypoint subset candidate has enough commonly visible points."""


class InvalidGroupCount(ProcalError):
    """Requested group count cannot partition the frame sequence."""


class IndivisibleDimensions(ProcalError):
    """Image dimensions are not divisible by the requested patch grid."""


class ParseError(ProcalError):
    """Input document could not be parsed."""


class SchemaError(ProcalError):
    """Input document parsed but violates the expected schema."""


class FrameError(ProcalError):
    """Wraps a per-frame failure with the 1-based frame index attached."""

    def __init__(self, frame_index, cause):
        super().__init__(f"frame {frame_index}: {cause}")
        self.frame_index = frame_index
        self.cause = cause
