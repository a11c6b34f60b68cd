"""Desk-scale numerics for partial quasi-morphisms on cotangent bundles of tori."""
__version__ = "0.1.0"
