"""Guidance-behavior synthesis and interaction-pattern mining for planar vehicles."""

__version__ = "0.1.0"
