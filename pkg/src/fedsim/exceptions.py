class FedSimError(Exception):
    """Base class for all errors raised by fedsim."""


class DimensionError(FedSimError, ValueError):
    pass


class ConfigError(FedSimError, ValueError):
    """Invalid configuration. ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ProtocolError(FedSimError):
    """A round-protocol precondition was violated (e.g. aggregating nothing)."""


class DataError(FedSimError, ValueError):
    pass


class PartitionError(DataError):
    pass


class RoundError(FedSimError):
    """Wraps an exception raised inside a round, with the round index attached."""

    def __init__(self, round_index, cause):
        super().__init__(f"round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause
