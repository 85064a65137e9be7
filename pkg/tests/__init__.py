"""Tests for entangled_clock package."""
