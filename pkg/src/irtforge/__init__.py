"""Rasch calibration and synthetic-respondent augmentation toolkit."""

__version__ = "0.1.0"
