"""Data module for entangled-clock package."""
