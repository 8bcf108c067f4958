"""Random fiber microstructures: generation, spatial statistics and elastic homogenization."""

from .geometry import Domain, Fiber, Microstructure, validate, volume_fraction
from .generate import GenerationError, RestrictedRegion, SrmParams, hexagonal_lattice, srm_generate
from .homogenize import ElasticPhase, LoadCase, effective_properties

__version__ = "0.1.0"

__all__ = [
    "Domain",
    "ElasticPhase",
    "Fiber",
    "GenerationError",
    "LoadCase",
    "Microstructure",
    "RestrictedRegion",
    "SrmParams",
    "effective_properties",
    "hexagonal_lattice",
    "srm_generate",
    "validate",
    "volume_fraction",
    "__version__",
]
