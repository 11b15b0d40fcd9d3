"""Exception hierarchy shared by all heraldsim modules."""


class HeraldSimError(Exception):
    """Base class for every error raised by heraldsim."""

    exit_code = 1


class ConfigError(HeraldSimError):
    exit_code = 2


class DataFormatError(HeraldSimError):
    exit_code = 3


class FormatError(DataFormatError):
    """Malformed binary or CSV time-tag / record / histogram file."""


class OrderViolation(DataFormatError):
    """Time tags not in nondecreasing (time, channel) order."""


class IoError(DataFormatError, OSError):
    pass


class InvalidChannel(HeraldSimError, ValueError):
    pass


class InvalidParam(HeraldSimError, ValueError):
    pass


class InvalidTransition(HeraldSimError, ValueError):
    pass


class InvalidState(HeraldSimError, ValueError):
    pass


class OrphanTag(DataFormatError):
    """A detector tag that does not fall inside any recorded cycle."""


class AnalysisError(HeraldSimError):
    exit_code = 4


class UndefinedMetric(AnalysisError):
    pass


class FitDiverged(AnalysisError):
    pass


class DegenerateInput(AnalysisError):
    pass
