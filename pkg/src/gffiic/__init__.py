"""Critical level sets of the metric-graph Gaussian free field on boxes of Z^d.

Samplers, cluster exploration, Green's functions, capacities, loop soups and
Monte Carlo estimators for one-arm, crossing, volume and incipient infinite
cluster statistics.
"""

__version__ = "0.1.0"

from .lattice import Annulus, BoxGeom, CapacityError, DomainError
from .gff import FieldSample, sample_dense_oracle, sample_spectral
from .stats import Estimate, SlopeFit, fit_loglog

__all__ = ["Annulus", "BoxGeom", "CapacityError", "DomainError", "Estimate", "FieldSample", "SlopeFit",
           "fit_loglog", "sample_dense_oracle", "sample_spectral"]
