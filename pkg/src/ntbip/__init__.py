"""Multitype Markov branching processes with immigration and resurrection."""

__version__ = "0.1.0"
