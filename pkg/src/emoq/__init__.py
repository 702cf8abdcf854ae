"""Emotion-aware residual vector quantization toolkit."""

__version__ = "0.1.0"
