"""Toolkit for building, formatting, scoring and executing Android function-calling data."""

__version__ = "0.1.0"
