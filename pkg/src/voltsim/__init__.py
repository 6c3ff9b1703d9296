"""Reduced-voltage DRAM simulation: circuit model, timing, policies and errors."""

__version__ = "0.1.0"
