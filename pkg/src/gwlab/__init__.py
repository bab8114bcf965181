"""gwlab: exact numerical laboratory for multitype branching processes."""

__version__ = "0.1.0"
