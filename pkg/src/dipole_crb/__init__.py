"""Cramer-Rao bounds and ML estimators for locating a Hertzian dipole from the
electric field observed over a square surface."""

__version__ = "0.1.0"

from .errors import (AccuracyNotReached, DegenerateGeometry, DipoleCrbError, EmptyGrid,
                     NoConvergence, NonFinite, SingularInformation)
from .em_field import DipoleSource, ObservationSurface, analytic_field
from .fim import CrbReport, FisherMatrix, assemble_fim, crb_known, crb_report, crb_unknown
from .cpl import CplParams, crb_cpl, script_integrals

__all__ = [
    "__version__", "AccuracyNotReached", "DegenerateGeometry", "DipoleCrbError", "EmptyGrid",
    "NoConvergence", "NonFinite", "SingularInformation", "DipoleSource", "ObservationSurface",
    "analytic_field", "CrbReport", "FisherMatrix", "assemble_fim", "crb_known", "crb_report",
    "crb_unknown", "CplParams", "crb_cpl", "script_integrals",
]
