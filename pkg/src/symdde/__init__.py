"""Symbolic computation of Lie point symmetries of differential-difference
equations on fixed, non-transforming lattices."""

from .expr import Expr, parse  # noqa: F401

__version__ = "0.1.0"
