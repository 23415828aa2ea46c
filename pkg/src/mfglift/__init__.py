"""Mean field games with common noise via translation-invariant lifts."""

__version__ = "0.1.0"
