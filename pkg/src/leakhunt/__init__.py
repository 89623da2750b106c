"""Model-based leak detection for districtualized water networks."""

__version__ = "0.1.0"
