"""Numerical holonomy of Finsler spaces.

Forward-mode autodiff drives every derivative: the fundamental tensor,
spray, nonlinear connection and Berwald coefficients come from an
expression for F, transport integrates the horizontal lift, and the
holonomy algebra is estimated by the numerical rank of sampled
curvature fields and their covariant derivatives.
"""

__version__ = "0.1.0"

from .finsler_core import FinslerSpace, GeometryError
from .metric_expr import MetricSpec, builtin, parse
from .transport import Curve, transport

__all__ = ["FinslerSpace", "GeometryError", "MetricSpec", "builtin", "parse", "Curve", "transport", "__version__"]
