"""Hermite polynomial chaos, sparse regression and bispectral surrogates."""
from .basis import TotalOrderBasis, build_basis, evaluate_basis
from .sparse import SparseNonConvergence, SparseRegressionConfig, sparse_regress
from .surrogate import BispectralSurrogate, ModePCE, assemble_surrogate, build_surrogate, evaluate_surrogate

__all__ = [
    "TotalOrderBasis",
    "build_basis",
    "evaluate_basis",
    "SparseNonConvergence",
    "SparseRegressionConfig",
    "sparse_regress",
    "BispectralSurrogate",
    "ModePCE",
    "assemble_surrogate",
    "build_surrogate",
    "evaluate_surrogate",
]
