"""Correspondence-free hand-eye calibration by adversarial distribution matching."""

__version__ = "0.1.0"
