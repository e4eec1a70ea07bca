"""Relational isolation fuzzing on a simulated CPU with injectable leaks."""
__version__ = "0.1.0"
