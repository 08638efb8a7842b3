"""Multimodal short-video recommendation with differentially private ranking."""

__version__ = "0.1.0"
