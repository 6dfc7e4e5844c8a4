"""Simulation and steganalysis of QKD-embedded steganography."""

__version__ = "0.1.0"

from .errors import ConfigError, EmbeddingFailure, ProtocolError  # noqa: E402,F401
