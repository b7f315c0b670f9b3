"""Exception types shared across the package."""


class PatchvoteError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(PatchvoteError):
    """A configuration value or combination of values is invalid."""


class NumericError(PatchvoteError):
    """A numeric input contains non-finite values; the message names where."""


class CodecError(PatchvoteError):
    """Genome layout or checkpoint data does not match the expected shape."""


class EnvProtocolError(PatchvoteError):
    """The episodic reset/step protocol was violated (e.g. step after done)."""


class BridgeError(PatchvoteError):
    """Base class for remote-environment session failures."""


class HandshakeError(BridgeError):
    """The remote side sent an unusable or incompatible handshake."""


class SessionError(BridgeError):
    """The session died mid-episode (broken pipe, timeout)."""


class ProtocolViolation(BridgeError):
    """The remote side sent bytes that do not follow the wire format."""


class EmptyArchiveError(PatchvoteError):
    """A best-solution query was made before any candidates were evaluated."""


class EmptyReportError(PatchvoteError):
    """An analysis was requested over zero traces or zero retained data."""


class RolloutError(PatchvoteError):
    """An episode could not be completed (environment or session failure)."""
