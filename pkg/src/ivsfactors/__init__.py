"""Random-matrix and factor analysis of implied-volatility surface returns."""

from .errors import (
    DegenerateSpectrumError,
    DomainError,
    EmptyResultError,
    InputError,
    InsufficientDataError,
    IvsError,
    NumericError,
    SelectionError,
    SmoothingError,
)
from .returns import IvsTensor, ReturnsPanel, build_tensor, panel_from_surfaces, raw_returns, standardize
from .rmt_spectrum import (
    MpFit,
    SpectrumReport,
    effective_dimension,
    fit_mp_support,
    ks_test,
    mp_cdf,
    mp_density,
    select_factor_count,
    svd_panel,
)

__version__ = "0.1.0"
