"""Synchronized maneuvers for small robot swarms over lossy broadcast."""

__version__ = "0.1.0"
