"""Sequence-to-sequence toolkit with a buffer-memory-enhanced GRU decoder."""

__version__ = "0.1.0"
