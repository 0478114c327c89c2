"""dermkit: desk-scale dermatology CoT training and evaluation toolkit."""

__version__ = "0.1.0"
