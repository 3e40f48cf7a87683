"""Benford-law conformance tests for epidemic counts and their cross-country correlates."""

__version__ = "0.1.0"
