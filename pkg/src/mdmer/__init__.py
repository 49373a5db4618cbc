"""Multi-domain music emotion recognition: acoustic features, symbolic tokens, fused model."""

__version__ = "0.1.0"
