"""Batch-graph transformer for mini-batch metric learning, in numpy."""

__version__ = "0.1.0"
