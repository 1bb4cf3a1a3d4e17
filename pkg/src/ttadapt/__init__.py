"""Online test-time adaptation engine for prototype-based zero-shot classifiers."""

__version__ = "0.1.0"
