"""Exception types shared across the package.

Every domain error derives from :class:`EegsegError` so callers can catch
one base class at pipeline boundaries while tests assert the precise type.
"""


class EegsegError(ValueError):
    """Base class for all domain errors raised by this package."""


# ---------------------------------------------------------------- imaging
class NonDivisibleDims(EegsegError):
    """Image dimensions are not divisible by the requested grid."""


class DimensionMismatch(EegsegError):
    """Two objects that must share dimensions do not."""


class LengthMismatch(EegsegError):
    """A per-window value vector does not match the window count."""


# ---------------------------------------------------------------- synthsig
class InvalidSpec(EegsegError):
    """A generator specification violates its declared constraints."""


class InvalidBand(EegsegError):
    """Band-pass edges are out of range for the sample rate."""


class NonIntegralFactor(EegsegError):
    """Requested rate change is not an integral decimation factor."""


class OnsetOutOfRange(EegsegError):
    """A stimulus onset leaves too little margin inside the recording."""


class WindowOutOfRange(EegsegError):
    """A feature window falls outside the epoch time span."""


class EmptyClass(EegsegError):
    """No epochs of the requested class are available."""


# ---------------------------------------------------------------- classify
class SingleClassData(EegsegError):
    """An operation needing both classes received only one."""


class NonPositiveHyperparameter(EegsegError):
    """C and gamma must be strictly positive."""


class DegenerateFolds(EegsegError):
    """Cross-validation folds cannot all contain both classes."""


class NoPositives(EegsegError):
    """Average precision requires at least one positive example."""


# ---------------------------------------------------------------- eegmap
class ConstantMap(EegsegError):
    """Map has zero dynamic range; normalization or relative thresholds undefined."""


class NegativeSigma(EegsegError):
    """Gaussian filter width must be non-negative."""


class MapNotNormalized(EegsegError):
    """Absolute thresholding requires a normalized map."""


class InvalidThresholdOrder(EegsegError):
    """Trimap thresholds must satisfy p1 < p2 within their ranges."""


class EmptyForeground(EegsegError):
    """No pixel exceeds the upper trimap threshold; GrabCut cannot be seeded."""


class GeometryMismatch(EegsegError):
    """Maps being combined do not share grid geometry."""


class EmptyList(EegsegError):
    """An aggregate operation received no inputs."""


# ---------------------------------------------------------------- grabcut
class TooFewPixels(EegsegError):
    """Fewer pixels than mixture components."""


# ---------------------------------------------------------------- optimize
class EmptyTrainingSet(EegsegError):
    """Parameter learning requires at least one training image."""
