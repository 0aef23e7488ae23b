"""
Stabilizer Rényi entropy of two coupled SYK clusters.

This package provides:
- Exact diagonalization references for small N (direct and replicated traces)
- The large-N thermal saddle (black-hole and wormhole branches)
- The large-N four-replica SRE saddle with its auxiliary spin sectors
- Beta sweeps, branch selection and transition location
- A key=value config driven command line writing CSV tables
"""

__version__ = "0.1.0"

from .domain import (
    ALL_SECTORS,
    REDUCED_SECTORS,
    ConfigError,
    ModelParams,
    ParameterError,
    SectorLabel,
    SreSuiteError,
    TauGrid,
    validate_params,
)

__all__ = [
    "__version__",
    "ALL_SECTORS",
    "REDUCED_SECTORS",
    "ConfigError",
    "ModelParams",
    "ParameterError",
    "SectorLabel",
    "SreSuiteError",
    "TauGrid",
    "validate_params",
]
