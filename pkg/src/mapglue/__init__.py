"""Multimodal map/photo image matching with a dual-graph transformer."""

__version__ = "0.1.0"
