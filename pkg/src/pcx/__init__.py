"""Explain black-box point-cloud classifiers and verify the explanations by point flipping."""

__version__ = "0.1.0"
