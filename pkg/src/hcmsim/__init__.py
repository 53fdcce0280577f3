"""Hybrid cube model simulator: modules on a tilting platform that self-assemble
by magnetic docking and local IR communication."""

__version__ = "0.1.0"
