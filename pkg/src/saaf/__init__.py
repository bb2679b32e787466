"""Smooth adaptive activation functions in small regression networks."""
from .core import (APLU, BreakGrid, LReLU, PReLU, ReLU, Saaf, basis, boxcar, make_activation,
                   make_uniform_grid, poly_basis)
from .errors import DataError, IngestionError, SaafError, SolverError, TrainingError, UsageError

__version__ = "0.1.0"
