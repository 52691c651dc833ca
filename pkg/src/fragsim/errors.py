class ConfigError(ValueError):
    """Invalid scenario, radio or strategy parameters."""


class ProtocolError(RuntimeError):
    """A protocol state machine received an impossible input."""
