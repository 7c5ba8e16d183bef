"""Centralized coordinate learning and angular-margin losses on a desk-scale testbed."""

__version__ = "0.1.0"
