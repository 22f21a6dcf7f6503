"""Numerical toolkit for inverse-limit conjugacies of hyperbolic endomorphisms.

Builds orbit-space metrics, plane-field families and the contraction solve
of the conjugacy equation between a hyperbolic endomorphism and its C1
perturbations, on flat model spaces.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
