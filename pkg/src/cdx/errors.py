"""Exception hierarchy shared by all cdx modules."""


class CdxError(Exception):
    """Base class for every error raised by cdx."""


# nifti_io
class NiftiError(CdxError):
    pass


class BadMagic(NiftiError):
    pass


class BadHeaderSize(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class TruncatedData(NiftiError):
    pass


# phenotypic
class MissingColumn(CdxError):
    pass


class EmptyResult(CdxError):
    pass


class LabelOutOfRange(CdxError, ValueError):
    pass


# shared numeric/shape errors
class ShapeMismatch(CdxError, ValueError):
    pass


class ConvergenceFailure(CdxError):
    pass


class RankDeficient(CdxError):
    pass


# connectivity
class TooFewTimepoints(CdxError, ValueError):
    pass


class SingularCovariance(CdxError):
    pass


class NotPositiveDefinite(CdxError):
    pass


class NotSymmetric(CdxError, ValueError):
    pass


class FoldCount(CdxError, ValueError):
    pass


# learners
class NonFiniteLoss(CdxError):
    pass


class SingleClass(CdxError, ValueError):
    pass


class KTooLarge(CdxError, ValueError):
    pass


class ClassTooSmall(CdxError, ValueError):
    pass


# synthetic / pipeline
class SpecInvalid(CdxError, ValueError):
    pass


class StageError(CdxError):
    """Wraps an exception raised inside a pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
