"""Exception types shared across the package."""


class PerishfairError(Exception):
    """Base class for all package errors."""


class InvalidSchedule(PerishfairError):
    """Explicit schedule is not a bijection onto {1..B}."""


class MissingPath(PerishfairError):
    """Hindsight-optimal ordering requested without a realized sample path."""


class InvalidDelta(PerishfairError):
    """Failure probability outside (0, 1)."""


class InvalidMean(PerishfairError):
    """Nonpositive mean passed to a concentration bound."""


class InvalidConfig(PerishfairError):
    """Malformed experiment or operation configuration."""


class InvalidInput(PerishfairError):
    """Inputs with mismatched dimensions or inconsistent provenance."""


class Overdraw(PerishfairError):
    """Requested consumption exceeds remaining budget beyond tolerance."""


class UnknownInstance(PerishfairError):
    """Unrecognized named instance."""


class DataIntegrity(PerishfairError):
    """Retail series violates its accounting identity."""


class InstanceParseError(PerishfairError):
    """Instance definition file is invalid; message carries the key path."""

    def __init__(self, key_path: str, reason: str):
        self.key_path = key_path
        self.reason = reason
        super().__init__(f"{key_path}: {reason}")
