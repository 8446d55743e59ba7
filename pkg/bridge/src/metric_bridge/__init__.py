"""Subprocess server wrapping differentiable no-reference quality metrics
behind a line-delimited JSON score/gradient protocol."""

__version__ = "0.1.0"
