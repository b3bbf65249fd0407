"""Dual-node solver for free boundary Monge-Ampere type problems."""

__version__ = "0.1.0"

from .convex_core import PiecewiseAffineConvex, Polytope, legendre_transform, lower_envelope
from .structure import StructuralPair, WeightedDomain, classify_structure
from .functionals import energy_and_gradient, functional_I, functional_J
from .normalize import normalize_translation
from .solver import SolveConfig, SolveResult, el_residual, minimize_energy
from .radial import RadialProblem, radial_solve
from .estimator import FreeBoundarySolver

__all__ = [
    "__version__", "PiecewiseAffineConvex", "Polytope", "legendre_transform", "lower_envelope",
    "StructuralPair", "WeightedDomain", "classify_structure", "energy_and_gradient", "functional_I",
    "functional_J", "normalize_translation", "SolveConfig", "SolveResult", "el_residual",
    "minimize_energy", "RadialProblem", "radial_solve", "FreeBoundarySolver",
]
