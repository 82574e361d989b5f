"""Vertex singularities and shape derivatives for piecewise-constant conductivity
on polygonal partitions."""

__version__ = "0.1.0"
