"""Pedestrian tracking from overhead depth sensors and Social Force calibration."""

__version__ = "0.1.0"
