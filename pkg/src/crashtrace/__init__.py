"""Crash-report-to-simulation reconstruction pipeline."""

__version__ = "0.1.0"
