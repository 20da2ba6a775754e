"""Small-anomaly magnetostatic forward models and inversion."""

__version__ = "0.1.0"
