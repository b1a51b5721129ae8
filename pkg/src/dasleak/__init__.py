"""Desk-scale fiber-optic DAS water-pipe leak detection pipeline."""

__version__ = "0.1.0"
