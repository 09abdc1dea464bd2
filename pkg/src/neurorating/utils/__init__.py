"""Utility modules for neurorating."""
