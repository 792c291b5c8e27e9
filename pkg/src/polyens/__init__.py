"""Polynomial ensembles of random matrices.

Function-level ensembles (bases, kernels, average characteristic
polynomials), the transforms that map one ensemble to another, matrix
samplers that realise the same transforms, and tools that compare the two.
"""

from .basis import Domain, FunctionBasis, hermite, indicator, laguerre, make_basis, tabulated
from .ensemble import (
    PolynomialEnsemble,
    andreief_det,
    average_char_poly,
    correlation_kernel,
    ensemble_from_basis,
    joint_density,
    span_equal,
)
from .rmt import ExperimentConfig, RngStream, sample_spectra
from .transforms import PipelineStep, StepKind, apply_pipeline, parse_pipeline
from .verify import (
    InterlacingMode,
    check_interlacing,
    conditional_spectral_density,
    run_verification,
)

__version__ = "0.1.0"

__all__ = [
    "Domain",
    "FunctionBasis",
    "hermite",
    "indicator",
    "laguerre",
    "make_basis",
    "tabulated",
    "PolynomialEnsemble",
    "andreief_det",
    "average_char_poly",
    "correlation_kernel",
    "ensemble_from_basis",
    "joint_density",
    "span_equal",
    "ExperimentConfig",
    "RngStream",
    "sample_spectra",
    "PipelineStep",
    "StepKind",
    "apply_pipeline",
    "parse_pipeline",
    "InterlacingMode",
    "check_interlacing",
    "conditional_spectral_density",
    "run_verification",
]
