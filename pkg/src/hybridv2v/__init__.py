"""Delay bounds and cooperative control for hybrid cellular + mmWave V2V links."""

__version__ = "0.1.0"
