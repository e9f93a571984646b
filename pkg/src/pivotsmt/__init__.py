"""Pivot-based phrase translation between related languages with subword units."""

__version__ = "0.1.0"
