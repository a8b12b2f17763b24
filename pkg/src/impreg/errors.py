"""Exception types raised across the package."""


class ImpregError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateGain(ImpregError):
    """Frequency response is unusable (zero DC gain or no -3 dB crossing)."""


class DegenerateSequence(ImpregError):
    """A signal has (numerically) zero variance and cannot be normalized."""


class SequenceTooShort(ImpregError):
    """Record is too short to form a single regression equation."""


class SingularSystem(ImpregError):
    """Linear system solve failed beyond the conditioning threshold."""


class NonpositiveNoise(ImpregError):
    """Noise variance must be strictly positive."""


class NumericalFailure(ImpregError):
    """A numerical routine failed after all fallbacks were exhausted."""


class OptimizationFailed(ImpregError):
    """Hyperparameter search could not produce a finite optimum."""


class NonFiniteActivation(ImpregError):
    """Non-finite value appeared in a network forward pass."""


class NonFiniteGradient(ImpregError):
    """Non-finite value appeared in a network gradient."""


class EmptyDataset(ImpregError):
    """Operation requires at least one example."""


class FormatVersionMismatch(ImpregError):
    """File magic or format version is not one this code reads."""


class ChecksumMismatch(ImpregError):
    """File is truncated or its checksum does not match its payload."""


class DegenerateDenominator(ImpregError):
    """Score denominator is numerically zero."""
