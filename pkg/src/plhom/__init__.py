"""Finite element toolkit for the homogenization of p-Laplace parabolic
problems in perforated domains with dynamical boundary conditions."""

__version__ = "0.1.0"
