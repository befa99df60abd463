"""Pseudo-spectral toolkit for lattice stochastic Burgers, KPZ and heat equations."""

__version__ = "0.1.0"
