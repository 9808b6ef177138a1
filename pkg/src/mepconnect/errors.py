"""Exception hierarchy shared by all modules."""


class MepConnectError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MepConnectError, ValueError):
    pass


class ContractError(MepConnectError, ValueError):
    pass


class NumericError(MepConnectError, ArithmeticError):
    pass


class TrainingError(NumericError):
    pass


class FormatError(MepConnectError, ValueError):
    pass


class DegeneratePathError(MepConnectError, ValueError):
    pass


class CapabilityError(MepConnectError, TypeError):
    pass


class RejectedPairError(MepConnectError, ValueError):
    pass


class ConfigError(MepConnectError, ValueError):
    pass
