"""Homogenization toolkit for thin domains with a locally periodic
oscillating top boundary.

The pipeline: describe the boundary profile and its local period as
closed-form expressions, build the period-adapted partition of the unit
interval, solve the per-position cell problems for the effective diffusion
coefficient, solve the one-dimensional limit equation, and quantify how the
direct thin-domain solutions converge to it (with first-order correctors)
as the thickness parameter goes to zero.
"""

from .geometry import ProfileSpec, Partition, CellGeometry
from .homogenize import EffectiveTable, compute_effective, eval_effective, run_pipeline
from .corrector import ConvergenceReport, convergence_study, error_report

__all__ = [
    "ProfileSpec",
    "Partition",
    "CellGeometry",
    "EffectiveTable",
    "compute_effective",
    "eval_effective",
    "run_pipeline",
    "ConvergenceReport",
    "convergence_study",
    "error_report",
]
