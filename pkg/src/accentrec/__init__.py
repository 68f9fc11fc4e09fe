"""Utterance-level discriminative embedding learning with a CTC auxiliary task."""

__version__ = "0.1.0"
