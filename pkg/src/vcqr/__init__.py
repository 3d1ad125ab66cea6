"""Varying-coefficient quantile regression with post-selection inference."""
from .core import (
    KERNELS,
    Dataset,
    KernelSpec,
    LocalizedDesign,
    QuerySpec,
    build_design,
    default_bandwidth,
    get_kernel,
    kernel_weights,
    knight_decompose,
    psi_tau,
    rho_tau,
)
from .decorrelation import Decorrelator, Step2Options, fit_step2, lambda_v
from .density import estimate_density, plugin_hessian, powell_bandwidth
from .exceptions import VCQRError, VCQRWarning
from .inference import InferenceResult, confidence_intervals, covariance
from .lasso import GroupLassoFit, SolverOptions, fit_step1, lambda_b
from .estimators import DecorrelatedQuantileInference, LocalQuantileGroupLasso
from .pipeline import PipelineConfig, run_pipeline
from .simulation import SimConfig, SimParams, calibrate_r2, generate_dataset, run_study

__all__ = [
    "KERNELS", "Dataset", "KernelSpec", "LocalizedDesign", "QuerySpec", "build_design",
    "default_bandwidth", "get_kernel", "kernel_weights", "knight_decompose", "psi_tau", "rho_tau",
    "Decorrelator", "Step2Options", "fit_step2", "lambda_v",
    "estimate_density", "plugin_hessian", "powell_bandwidth",
    "VCQRError", "VCQRWarning",
    "InferenceResult", "confidence_intervals", "covariance",
    "GroupLassoFit", "SolverOptions", "fit_step1", "lambda_b",
    "DecorrelatedQuantileInference", "LocalQuantileGroupLasso",
    "PipelineConfig", "run_pipeline",
    "SimConfig", "SimParams", "calibrate_r2", "generate_dataset", "run_study",
]

__version__ = "0.1.0"
