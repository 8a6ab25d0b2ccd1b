"""Error hierarchy shared by every module of the simulator."""


class P2PError(Exception):
    """Base class for all simulator errors"""


class ValidationError(P2PError, ValueError):
    """Invalid argument passed to a constructor or operation"""


class DimensionError(ValidationError):
    """Series with mismatching horizons or step durations"""


class ProtocolError(P2PError):
    """Negotiation protocol misuse, e.g. an offer past the deadline"""


class ConfigError(P2PError):
    """Invalid scenario configuration or missing input file"""


class ProfileParseError(ConfigError):
    """Malformed CSV input; the message names the offending row"""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DegenerateInputError(P2PError):
    """Input that leaves nothing to compute on"""


class SearchExhaustedError(P2PError):
    """A bounded search did not reach its target"""

    def __init__(self, message, best_df=None):
        self.best_df = best_df
        super().__init__(message)


class LogicError(P2PError):
    """Internal contract violated by the caller"""
