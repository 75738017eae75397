"""Exception types shared across the package."""


class TemptError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(TemptError):
    pass


class InvalidStride(TemptError):
    pass


class NegativeVariance(TemptError):
    pass


class NonFiniteValue(TemptError):
    """An op produced NaN or Inf; never propagated silently."""


class NonFiniteActivation(TemptError):
    pass


class NonScalarLoss(TemptError):
    pass


class NonFiniteLoss(TemptError):
    pass


class NonFiniteGradient(TemptError):
    pass


class LabelOutOfRange(TemptError):
    pass


class EmptyRegionSet(TemptError):
    pass


class EvenWindow(TemptError):
    pass


class WindowTooLarge(TemptError):
    pass


class InvalidSpec(TemptError):
    pass


class NormalizationDegenerate(TemptError):
    pass


class CorruptTensorFile(TemptError):
    pass


class CorruptWeights(TemptError):
    pass


class VersionMismatch(TemptError):
    pass


class NoAdaptableParams(TemptError):
    pass


class ArchMismatch(TemptError):
    pass


class EmptyClass(TemptError):
    pass


class DivergedLoss(TemptError):
    pass


class LengthMismatch(TemptError):
    pass


class InvalidRange(TemptError):
    pass


class ConfigError(TemptError):
    pass
