"""Long-term fair decision making with a learned temporal simulator."""

__version__ = "0.1.0"
