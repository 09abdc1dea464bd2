"""CLI interface for neurorating."""
