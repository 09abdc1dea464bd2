"""Core functionality for neurorating."""
