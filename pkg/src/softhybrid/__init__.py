"""Hybrid offline/online control of pneumatic soft robots in simulation."""

__version__ = "0.1.0"
