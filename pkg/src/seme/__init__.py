"""Vocabulary-defined semantics for merging language models and moving
representations between them."""

__version__ = "0.1.0"
