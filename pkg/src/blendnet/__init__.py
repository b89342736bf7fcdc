"""Spatial and temporal attention blending for feature-pyramid video detection."""
__version__ = "0.1.0"
