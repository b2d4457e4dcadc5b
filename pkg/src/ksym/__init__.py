"""k-symplectic Lagrangian field theory with symmetry: build second-order
field equations, reduce them, test integrability, and reconstruct full
solutions from reduced ones."""

__version__ = "0.1.0"
