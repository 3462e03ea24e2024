"""Corpus complexity and learnability measurement toolkit."""

__version__ = "0.1.0"
