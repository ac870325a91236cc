"""Stroke-based image reproduction via hindsight self-supervision and RL."""

__version__ = "0.1.0"
