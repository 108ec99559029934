"""Explicit locally uniformly convex renorming of C(K) on finitely presented compacta."""

__version__ = "0.1.0"
