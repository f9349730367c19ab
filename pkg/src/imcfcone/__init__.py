"""IMCF of star-shaped graphs over spherical cap cones."""
from . import capgeom, diagnostics, flowcore, graphsurf, oracle, warpfn
from .errors import (ConfigurationError, DomainError, ImcfError, NumericError,
                     SingularityError)
from .flowcore import FlowConfig, Trajectory, evolve
from .graphsurf import GraphState
from .warpfn import WarpSpec, euclidean, hyperboloidal

__version__ = "0.1.0"
