"""Exception hierarchy shared by all modules."""


class PrecodingError(Exception):
    """Base class for every error raised by this package."""


class RankDeficient(PrecodingError):
    """A matrix expected to have full column rank does not."""


class NoConvergence(PrecodingError):
    """An iterative decomposition failed to converge."""


class SingularGram(PrecodingError):
    """``H H^H`` is singular and no regularization was requested."""


class DependentRows(PrecodingError):
    """Lattice basis rows are linearly dependent."""


class EmptyNullSpace(PrecodingError):
    """The interference channel has full column rank; no null space exists."""


class SingularEffectiveChannel(PrecodingError):
    """The per-user effective channel is not invertible."""


class DimensionMismatch(PrecodingError, ValueError):
    pass


class InvalidCoefficient(PrecodingError, ValueError):
    pass


class ZeroSignal(PrecodingError):
    """The precoded signal has zero energy, so it cannot be normalized."""


class MissingDecoder(PrecodingError):
    pass


class MissingTransform(PrecodingError):
    pass


class OddBitCount(PrecodingError, ValueError):
    pass


class LengthMismatch(PrecodingError, ValueError):
    pass


class Singular(PrecodingError):
    """Matrix is singular where an inverse is required."""


class UnsupportedPrecoder(PrecodingError, ValueError):
    pass


class ConfigInvalid(PrecodingError, ValueError):
    pass


class IoError(PrecodingError, OSError):
    """Reading or writing a result file failed."""
