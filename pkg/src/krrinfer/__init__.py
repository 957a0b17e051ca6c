"""Kernel ridge regression with inference for linear functionals and optima."""

from .functionals import (
    DerivEval,
    FunctionalEstimate,
    L2Inner,
    PointEval,
    bind,
    confidence_interval,
    cov_matrix,
    estimate,
    var_exact,
    var_hat,
)
from .kernels import MaternKernel, MultiIndex, UnsupportedKernelError
from .krr import Dataset, KrrFit, fit, select_hyperparams
from .optimum import OptimumResult, SingularHessian, estimate_optimum

__version__ = "0.1.0"

__all__ = [
    "DerivEval",
    "FunctionalEstimate",
    "L2Inner",
    "PointEval",
    "bind",
    "confidence_interval",
    "cov_matrix",
    "estimate",
    "var_exact",
    "var_hat",
    "MaternKernel",
    "MultiIndex",
    "UnsupportedKernelError",
    "Dataset",
    "KrrFit",
    "fit",
    "select_hyperparams",
    "OptimumResult",
    "SingularHessian",
    "estimate_optimum",
]
