"""Finite dyadic models of matrix-valued Calderon-Zygmund theory.

Modules: ncalg (matrix algebra), dyadic (grids, martingales, Haar system),
cuculescu (stopping projections, CZ and row/column decompositions),
operators (dyadic CZOs), hardy (H1/BMO functionals and atoms),
probes (Gundy, left/right CZ, truncation probes), cli (batch driver).
"""

__version__ = "0.1.0"
