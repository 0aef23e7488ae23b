"""
Domain types for the coupled-SYK stabilizer Rényi entropy suite.

Core Concepts:
- ModelParams: the physical knobs (N, J, mu, beta) of the two-cluster model
- TauGrid: discretization of one imaginary-time branch of length beta
- SectorLabel: the pair of auxiliary Ising spins (sigma_L, sigma_R) that
  survive the large-N reduction of the replica boundary conditions

All types are immutable and freely shareable between threads.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, asdict
from typing import Dict, List, Tuple

import numpy as np


# ============================================================================
# Errors
# ============================================================================

class SreSuiteError(Exception):
    """Base class for model and run errors raised by the suite."""


class ParameterError(SreSuiteError, ValueError):
    """Invalid physical parameters or time grid."""


class ConfigError(SreSuiteError):
    """One or more problems in a run configuration."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DimensionCapError(SreSuiteError):
    """Requested Hilbert space is larger than the dense cap."""


class OracleMismatchError(SreSuiteError):
    """Two exact evaluation paths disagree."""


class SpectrumPhaseError(SreSuiteError):
    """A Majorana-spectrum coefficient has a sizeable imaginary part."""


class SingularSectorError(SreSuiteError):
    """A sector propagator could not be factorized."""

    def __init__(self, sector: "SectorLabel", iteration: int, detail: str):
        self.sector = sector
        self.iteration = iteration
        super().__init__(f"sector {sector} at iteration {iteration}: {detail}")


class UnconvergedSaddleError(SreSuiteError):
    """An operation that needs a converged saddle received an unconverged one."""


class DisorderSampleError(SreSuiteError):
    """An estimator failed on one disorder sample."""

    def __init__(self, offset: int, seed: int, cause: Exception):
        self.offset = offset
        self.seed = seed
        self.cause = cause
        super().__init__(f"disorder sample {offset} (seed {seed}) failed: {cause}")


class GridMismatchError(SreSuiteError):
    """Curves or results that must share a grid do not."""


# ============================================================================
# Core Data Types
# ============================================================================

@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the two-cluster coupled SYK model."""

    n_per_side: int
    """N, Majoranas per cluster (2N in total, N qubits)"""

    coupling_j: float
    """J, disorder strength of the quartic couplings"""

    hopping_mu: float
    """mu, strength of the bilinear left-right hopping"""

    beta: float
    """Inverse temperature"""

    @property
    def n_qubits(self) -> int:
        """Qubit count of the 2N-Majorana system; every '+N ln 2' uses it."""
        return self.n_per_side

    @property
    def energy_unit(self) -> float:
        """J when J > 0, otherwise mu (1.0 for the free decoupled model)."""
        if self.coupling_j > 0:
            return self.coupling_j
        if self.hopping_mu > 0:
            return self.hopping_mu
        return 1.0

    @property
    def beta_j(self) -> float:
        return self.beta * self.coupling_j

    @property
    def mu_over_j(self) -> float:
        return self.hopping_mu / self.coupling_j if self.coupling_j > 0 else math.inf

    def with_beta(self, beta: float) -> ModelParams:
        return ModelParams(self.n_per_side, self.coupling_j, self.hopping_mu, beta)

    def with_mu(self, hopping_mu: float) -> ModelParams:
        return ModelParams(self.n_per_side, self.coupling_j, hopping_mu, self.beta)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class TauGrid:
    """Midpoint discretization of one branch [0, beta) into M slices."""

    slices_m: int
    """M, slices per branch (even)"""

    dtau: float
    """Slice width beta / M"""

    @classmethod
    def for_beta(cls, beta: float, slices_m: int) -> TauGrid:
        if slices_m <= 0:
            raise ParameterError(f"slice count must be positive, got {slices_m}")
        return cls(slices_m=slices_m, dtau=beta / slices_m)

    @property
    def beta(self) -> float:
        return self.dtau * self.slices_m

    def doubled(self) -> TauGrid:
        """Grid on a 2*beta branch with the same slice width."""
        return TauGrid(slices_m=2 * self.slices_m, dtau=self.dtau)

    def points(self) -> np.ndarray:
        """Midpoints tau_k = (k + 1/2) dtau."""
        return (np.arange(self.slices_m) + 0.5) * self.dtau


@dataclass(frozen=True)
class SectorLabel:
    """Boundary-condition sector (sigma_L, sigma_R) of the replica twists."""

    sigma_l: int
    sigma_r: int

    def __post_init__(self):
        if self.sigma_l not in (1, -1) or self.sigma_r not in (1, -1):
            raise ParameterError(f"sector spins must be +-1, got {self.sigma_l}, {self.sigma_r}")

    def paired(self) -> SectorLabel:
        """The partner sector (-sigma_L, -sigma_R) with identical determinant."""
        return SectorLabel(-self.sigma_l, -self.sigma_r)

    @property
    def product(self) -> int:
        return self.sigma_l * self.sigma_r

    def __str__(self) -> str:
        sign = {1: "+", -1: "-"}
        return f"({sign[self.sigma_l]},{sign[self.sigma_r]})"


ALL_SECTORS: Tuple[SectorLabel, ...] = (
    SectorLabel(1, 1),
    SectorLabel(1, -1),
    SectorLabel(-1, 1),
    SectorLabel(-1, -1),
)

# One representative of each pairing orbit; the partner carries the same weight.
REDUCED_SECTORS: Tuple[SectorLabel, ...] = (SectorLabel(1, 1), SectorLabel(1, -1))


@dataclass(frozen=True)
class CheckedConfig:
    """A validated (params, grid) pair."""

    params: ModelParams
    grid: TauGrid
    infinite_temperature: bool
    """True at beta = 0; observables then come from the maximally mixed state"""


# ============================================================================
# Validation
# ============================================================================

def validate_params(params: ModelParams, grid: TauGrid) -> CheckedConfig:
    """
    Check every domain invariant of a (params, grid) pair.

    Returns:
        CheckedConfig with beta = 0 flagged as infinite temperature

    Raises:
        ParameterError listing every violated rule
    """
    problems = []
    if not _is_integer(params.n_per_side) or params.n_per_side < 1:
        problems.append(f"n_per_side must be a positive integer, got {params.n_per_side!r}")
    for name, value, label in (
        ("coupling_j", params.coupling_j, "coupling"),
        ("hopping_mu", params.hopping_mu, "hopping"),
        ("beta", params.beta, "beta"),
    ):
        if value is None or not math.isfinite(value):
            problems.append(f"{name} must be finite, got {value!r}")
        elif value < 0:
            problems.append(f"negative {label}: {name}={value}")
    if grid.slices_m <= 0:
        problems.append(f"slice count must be positive, got {grid.slices_m}")
    elif grid.slices_m % 2:
        problems.append(f"odd slice count: slices_m={grid.slices_m}")
    if not math.isfinite(grid.dtau) or grid.dtau < 0:
        problems.append(f"dtau must be finite and non-negative, got {grid.dtau}")
    elif not problems:
        span = grid.dtau * grid.slices_m
        if abs(span - params.beta) > 1e-12 * max(params.beta, 1.0):
            problems.append(f"grid spans {span} but beta is {params.beta}")
    if problems:
        raise ParameterError("; ".join(problems))
    return CheckedConfig(params=params, grid=grid, infinite_temperature=params.beta == 0.0)


def _is_integer(value) -> bool:
    try:
        operator.index(value)
    except TypeError:
        return False
    return True
