"""Nonparametric estimation and testing of spatio-temporal covariance separability.

Modules
-------
covmodels   closed-form covariance models and lag-grid matrices
fieldgen    spatial designs and exact Gaussian field simulation
estimator   kernel covariance estimator, plug-in variance, bandwidth rules
measures    deviation measures and their variance-shape matrices
inference   exact, rank-k and relevant tests, confidence intervals
montecarlo  replicated rejection-rate experiments
cli         command-line entry point
"""
from __future__ import annotations

__version__ = "0.1.0"

from . import covmodels, errors, estimator, fieldgen, inference, measures  # noqa: E402
from .covmodels import LagGrid, build_cov_matrix, f_mn, builtin_model, scenario_grid  # noqa: E402
from .estimator import CovEstimate, KernelSpec, ScalingSpec, estimate_cov_matrix  # noqa: E402
from .fieldgen import FieldSample, SpatialDesign, UniformSquare, sample_locations, simulate_field  # noqa: E402
from .inference import TestSpec, ci_pt, ci_svd, test_exact_pt, test_exact_svd  # noqa: E402
from .measures import d_psi, d_rank1, d_rank_k  # noqa: E402

__all__ = [
    "covmodels", "errors", "estimator", "fieldgen", "inference", "measures",
    "LagGrid", "build_cov_matrix", "f_mn", "builtin_model", "scenario_grid",
    "CovEstimate", "KernelSpec", "ScalingSpec", "estimate_cov_matrix",
    "FieldSample", "SpatialDesign", "UniformSquare", "sample_locations", "simulate_field",
    "TestSpec", "ci_pt", "ci_svd", "test_exact_pt", "test_exact_svd",
    "d_psi", "d_rank1", "d_rank_k",
]
