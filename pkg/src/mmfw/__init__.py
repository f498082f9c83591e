"""Multiresolution matrix factorization wavelets and wavelet-convolutional
graph forecasting."""

from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FormatError,
    MmfwError,
    NotSymmetricError,
    ShapeError,
)
from .mmf import FactorizeConfig, MmfFactorization, factorize, reconstruct
from .sparse import SparseCoo, coo_from_dense, spmm, transpose_spmm
from .wavelets import WaveletBasis, extract_basis, wavelet_forward, wavelet_inverse

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DivergenceError", "FormatError", "MmfwError",
    "NotSymmetricError", "ShapeError", "FactorizeConfig", "MmfFactorization",
    "factorize", "reconstruct", "SparseCoo", "coo_from_dense", "spmm",
    "transpose_spmm", "WaveletBasis", "extract_basis", "wavelet_forward",
    "wavelet_inverse",
]
