"""Shiryaev-Roberts family change-point detectors and their Monte Carlo evaluation."""
__version__ = "0.1.0"
