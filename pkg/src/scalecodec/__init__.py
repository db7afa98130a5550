"""Scalable image coding: a compact base layer whose preview serves as the
inter-prediction reference for an enhancement layer."""

__version__ = "0.1.0"
