"""Closed-loop monitoring and correction of FDM prints with an agent pipeline."""

__version__ = "0.1.0"
