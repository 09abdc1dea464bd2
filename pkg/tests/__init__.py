"""Tests for neurorating."""
