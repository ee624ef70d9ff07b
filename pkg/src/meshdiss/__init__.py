"""Dissipativity-based analysis and topology design for hierarchical SIS spreading networks."""

__version__ = "0.1.0"
