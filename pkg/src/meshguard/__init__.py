"""Shape optimization with guaranteed minimum (solid) angles on simplicial meshes."""

__version__ = "0.1.0"
