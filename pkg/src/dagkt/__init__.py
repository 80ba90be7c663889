"""Difficulty- and attempts-aware graph knowledge tracing."""

__version__ = "0.1.0"
