"""Pipeline exception hierarchy"""


class PipelineError(ValueError):
    """Base class for every domain error raised by the pipeline"""


class InvalidCameraError(PipelineError):
    pass


class BehindCameraError(PipelineError):
    pass


class DegenerateBaselineError(PipelineError):
    pass


class EmptySegmentError(PipelineError):
    pass


class InfeasibleError(PipelineError):
    pass


class SamplingError(PipelineError):
    pass


class DimensionMismatchError(PipelineError):
    pass


class EmptyMapError(PipelineError):
    pass


class UnderdeterminedError(PipelineError):
    pass


class PointAtInfinityError(PipelineError):
    pass


class NearDegenerateGradientError(PipelineError):
    pass


class InvalidDepthError(PipelineError):
    pass


class NoValidPixelsError(PipelineError):
    pass


class ResolutionMismatchError(PipelineError):
    pass


class ScaleMismatchError(PipelineError):
    pass


class NonFiniteLossError(PipelineError):
    pass


class LabelRangeError(PipelineError):
    pass


class InvisiblePointError(PipelineError):
    pass


class VisibilityError(PipelineError):
    """Scene generation could not place a point under the visibility constraints"""
