"""Weighted sum-rate maximization for downlink multi-carrier NOMA."""

__version__ = "0.1.0"
