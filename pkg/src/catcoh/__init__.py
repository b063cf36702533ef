"""Catalytic coherence on energy ladders: channels, reservoirs and work extraction."""

__version__ = "0.1.0"
