"""Reconstruction of a 2D dielectric constant from multi-angle Cauchy data by Carleman-weighted Picard iteration."""

from .basis import AngularGrid, BasisSet, build_basis, compute_coefficients, on_angles
from .contraction import (CarlemanParams, ContractionRun, FourierField, carleman_diagnostic, carleman_weight,
                          initial_guess, picard_step, run_contraction)
from .forward import BoundaryDataset, Phantom, add_noise, extract_cauchy, generate_dataset, make_phantom, solve_forward
from .grid import SpatialGrid
from .lsq import solve_weighted_least_squares
from .pipeline import RunConfig, load_config
from .preprocess import FourierTraces, LogBoundaryField, choose_cutoff, compute_log_boundary, compute_traces
from .reconstruct import Metrics, Reconstruction, reconstruct_c, score, synthesize_v

__version__ = "0.1.0"

__all__ = [
    "AngularGrid", "BasisSet", "BoundaryDataset", "CarlemanParams", "ContractionRun", "FourierField",
    "FourierTraces", "LogBoundaryField", "Metrics", "Phantom", "Reconstruction", "RunConfig", "SpatialGrid",
    "add_noise", "build_basis", "carleman_diagnostic", "carleman_weight", "choose_cutoff", "compute_coefficients",
    "compute_log_boundary", "compute_traces", "extract_cauchy", "generate_dataset", "initial_guess", "load_config",
    "make_phantom", "on_angles", "picard_step", "reconstruct_c", "run_contraction", "score",
    "solve_forward", "solve_weighted_least_squares", "synthesize_v",
]
