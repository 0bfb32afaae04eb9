"""Physically based synthesis and evaluation of soft image effects (haze, fog, smoke, occlusions)."""

__version__ = "0.1.0"
