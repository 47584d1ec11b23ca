"""Feature-mapped physics-informed neural networks with radial basis layers.

The package solves forward and inverse PDE problems with an MLP preceded by
a feature layer (Fourier-type encodings, or partition-normalized radial basis
functions with optional polynomial terms), and benchmarks the mappings
against each other.
"""
import jax

jax.config.update("jax_enable_x64", True)

from . import autodiff, featmap, jet  # noqa: E402

__version__ = "0.1.0"
