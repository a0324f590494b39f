"""Lower-order P3 stress / P2 displacement mixed finite element for 3D elasticity."""

__version__ = "0.1.0"
