"""Executable network refinement for a swap server: interaction trees, models, a live server and a tester."""

__version__ = "0.1.0"
