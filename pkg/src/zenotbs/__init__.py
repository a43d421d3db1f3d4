"""Zeno and anti-Zeno control of topological boundary states in pumped waveguide lattices."""

__version__ = "0.1.0"
