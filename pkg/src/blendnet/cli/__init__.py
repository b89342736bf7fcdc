"""Command-line entry point: ``gen``, ``train``, ``eval``, ``ablate``, ``visualize``, ``selftest``."""
from .main import main

__all__ = ["main"]
