"""Co-evolutionary program search over generated candidate code."""

__version__ = "0.1.0"
