"""Exception types shared across the protocol engines."""


class ConfigError(ValueError):
    """Invalid experiment or protocol configuration."""


class ProtocolError(RuntimeError):
    """A protocol step could not be carried out (bad positions, aborted run)."""


class EmbeddingFailure(RuntimeError):
    """No admissible position carries the stego bit in this run."""
