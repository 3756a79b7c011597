"""Exception types raised across the package."""


class InvolutiveMCMCError(Exception):
    """Base class for all package errors."""


class ShapeError(InvolutiveMCMCError, ValueError):
    pass


class DomainError(InvolutiveMCMCError, ValueError):
    pass


class GrammarError(InvolutiveMCMCError, TypeError):
    """A composition that is not produced by the involutive closure rules."""


class NotVolumePreserving(InvolutiveMCMCError):
    pass


class DimensionTooLarge(InvolutiveMCMCError, ValueError):
    pass


class NonFiniteDensity(InvolutiveMCMCError, FloatingPointError):
    pass


class NonFiniteLoss(InvolutiveMCMCError, FloatingPointError):
    pass


class DegenerateVariance(InvolutiveMCMCError, ValueError):
    pass


class ConfigError(InvolutiveMCMCError, ValueError):
    pass


class ModelFormatError(InvolutiveMCMCError, ValueError):
    pass
