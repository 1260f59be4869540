"""Exception hierarchy shared by all modules."""


class CoinTrackError(Exception):
    """Base class for every error raised by the package."""


class DegenerateConfiguration(CoinTrackError):
    pass


class SingularMatrix(CoinTrackError):
    pass


class PointAtInfinity(CoinTrackError):
    pass


class DimensionMismatch(CoinTrackError):
    pass


class EmptyMask(CoinTrackError):
    pass


class DegenerateRect(CoinTrackError):
    pass


class EmptyIndex(CoinTrackError):
    pass


class BackendFailure(CoinTrackError):
    pass


class DegenerateAppearance(CoinTrackError):
    pass


class NoInitializationSource(CoinTrackError):
    pass


class InvalidTemplate(CoinTrackError):
    pass


class MissingFrame(CoinTrackError):
    pass


class InsufficientData(CoinTrackError):
    pass


class DegenerateTrajectory(CoinTrackError):
    pass


class DatasetError(CoinTrackError):
    """Malformed or incomplete dataset / results layout on disk."""


class ConfigError(CoinTrackError):
    pass
