"""Severity-aware Wasserstein training toolkit."""

__version__ = "0.1.0"
