"""Minimum-cardinality collective counterfactual explanations via column generation."""

__version__ = "0.1.0"
