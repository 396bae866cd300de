"""Intent-aware disentangled collaborative filtering over explicit ratings."""

__version__ = "0.1.0"
