"""Multi-bubble construction for the critical Choquard system on R^4."""

from .bubble_core import (
    Bubble,
    ChoquardParams,
    KernelFunction,
    PolygonAnsatz,
    eval_bubble,
    eval_V,
    eval_Z,
    kelvin_transform,
    make_polygon_ansatz,
    symmetry_reduce,
)
from .exceptions import ChoquardError
from .specials import alpha_constant, riesz_constant

__version__ = "0.1.0"

__all__ = [
    "Bubble",
    "ChoquardError",
    "ChoquardParams",
    "KernelFunction",
    "PolygonAnsatz",
    "alpha_constant",
    "eval_V",
    "eval_Z",
    "eval_bubble",
    "kelvin_transform",
    "make_polygon_ansatz",
    "riesz_constant",
    "symmetry_reduce",
]
