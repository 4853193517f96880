"""Data preparation, splitting, search, calibration and evaluation."""
