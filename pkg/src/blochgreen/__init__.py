"""Floquet-Bloch band structure and Green's function asymptotics on crystal graphs."""

from .crystal import (
    AdditiveFunction,
    CoverPoint,
    CrystalModel,
    Edge,
    build_floquet_matrix,
    cover_distance,
    direction,
    validate_model,
)
from .errors import BlochGreenError
from .io import load_fixture, parse_model, parse_offsets

__version__ = "0.1.0"
