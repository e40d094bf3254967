class SpadlinException(Exception):
    pass


class OutOfWindowException(SpadlinException, ValueError):
    pass


class NoSignalException(SpadlinException):
    pass


class UnsupportedPulseException(SpadlinException):
    pass


class DegenerateFitException(SpadlinException):
    pass


class HistogramRangeException(SpadlinException, ValueError):
    pass


class InsufficientTrialsException(SpadlinException):
    pass


class ConfigException(SpadlinException):
    pass


class AcceptanceException(SpadlinException):
    pass
