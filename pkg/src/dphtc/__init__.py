"""Differentially private hierarchical text classification with membership-inference auditing."""

__version__ = "0.1.0"
