"""Exception types raised by the bridge service."""


class BridgeError(Exception):
    """Base class for bridge failures."""


class BridgeConfigError(BridgeError, ValueError):
    """The service cannot start: bad references, mismatched tokenizers,
    or inconsistent model shapes."""
