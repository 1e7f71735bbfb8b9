"""Random walk loop soups, their clusters and crossing statistics.

Submodules: geometry, lattice, soup, clusters, bounds, conformal,
lamination, harness, fixtures, cli.
"""
from .errors import (ConfigError, ConsistencyError, DegenerateInputError, DomainError, InvalidInputError,
                     NoBridgeError, RejectedConfigurationError, SolverError)
from .geometry import Annulus, Point, PolyLoop, Quad, SectorAnnulus
from .lattice import GridDomain, loop_mass
from .soup import SoupConfig, kappa_to_lambda, sample_soup

__version__ = "0.1.0"

__all__ = [
    "Annulus", "Point", "PolyLoop", "Quad", "SectorAnnulus", "GridDomain", "loop_mass", "SoupConfig",
    "kappa_to_lambda", "sample_soup", "ConfigError", "ConsistencyError", "DegenerateInputError",
    "DomainError", "InvalidInputError", "NoBridgeError", "RejectedConfigurationError", "SolverError",
]
