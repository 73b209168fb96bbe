"""Deterministic crowd-navigation simulator with occlusion-aware sensing."""

__version__ = "0.1.0"
