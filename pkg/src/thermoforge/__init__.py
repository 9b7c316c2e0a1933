"""Discovery of thermodynamically admissible thermomechanical constitutive
models with input-convex neural potentials."""

__version__ = "0.1.0"
