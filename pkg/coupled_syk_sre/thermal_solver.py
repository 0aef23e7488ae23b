"""
Thermal Schwinger-Dyson solver for the coupled (two-cluster) SYK model.

Core Concepts:
- One representative L/R pair in the real gauge (G'_LR = -i G_LR), where the
  kinetic operator in frequency space is K = [[-i w - S_LL, mu - S_LR], [mu - S_LR, -i w - S_LL]]
  and Sigma_LL = J^2 G_LL^3, Sigma_LR = -J^2 G_LR^3.
- Time translation invariance lets the loop run in Matsubara space; only
  G - G_free is transformed back, so the free part is exact at any M.
- ln Z is the free value plus a determinant ratio against the free kernel and
  the on-shell quartic term; totals are n_per_side times the per-pair value.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft

from coupled_syk_sre.contour import (
    enforce_skew,
    factor_sector,
    free_contour,
    quartic_sum,
    self_energy,
    thermal_block,
)
from coupled_syk_sre.domain import (
    ModelParams,
    ParameterError,
    TauGrid,
    UnconvergedSaddleError,
    validate_params,
)
from utils.saddle_interface import DampedFixedPointSolver, IterationRecord
from utils.solver_config import SolverSettings, get_settings

if TYPE_CHECKING:
    from coupled_syk_sre.sweep_driver import BranchCurve, GridPolicy, TransitionEstimate

logger = logging.getLogger(__name__)

BLACK_HOLE = "black-hole"
WORMHOLE = "wormhole"

FREE_SEED = "free"
WORMHOLE_SEED = "wormhole-seed"
BLACK_HOLE_SEED = "black-hole-seed"


# ============================================================================
# Matsubara transforms
# ============================================================================

def matsubara_frequencies(grid: TauGrid) -> np.ndarray:
    """w_n = (2n+1) pi / beta for n = -M/2 .. M/2-1."""
    n = np.arange(grid.slices_m) - grid.slices_m // 2
    return (2 * n + 1) * math.pi / grid.beta


def to_frequency(f_tau: np.ndarray, grid: TauGrid) -> np.ndarray:
    """F(i w_n) = dtau sum_k f(tau_k) e^{i w_n tau_k} on the midpoint grid."""
    m = grid.slices_m
    n = np.arange(m) - m // 2
    k = np.arange(m)
    summed = m * fft.ifft(f_tau * np.exp(1j * math.pi * k / m))
    return grid.dtau * np.exp(1j * math.pi * (2 * n + 1) / (2 * m)) * summed[n % m]


def to_time(f_freq: np.ndarray, grid: TauGrid) -> np.ndarray:
    """Exact inverse of to_frequency: f(tau_k) = (1/beta) sum_n F(i w_n) e^{-i w_n tau_k}."""
    m = grid.slices_m
    n = np.arange(m) - m // 2
    k = np.arange(m)
    arranged = np.empty(m, dtype=complex)
    arranged[n % m] = f_freq * np.exp(-1j * math.pi * (2 * n + 1) / (2 * m))
    return np.exp(-1j * math.pi * k / m) * fft.fft(arranged) / grid.beta


def free_green_tau(grid: TauGrid, mu: float) -> Tuple[np.ndarray, np.ndarray]:
    """Two-level closed forms cosh(mu(beta/2-tau)) / 2cosh(beta mu/2) and the sinh partner."""
    tau = grid.points()
    half = grid.beta * mu / 2
    # overflow-free for large beta*mu
    plus = np.exp(-mu * tau)
    minus = np.exp(-mu * (grid.beta - tau))
    norm = 2 * (1 + math.exp(-2 * half))
    return (plus + minus) / norm, (plus - minus) / norm


def free_green_freq(grid: TauGrid, mu: float) -> Tuple[np.ndarray, np.ndarray]:
    w = matsubara_frequencies(grid)
    denom = w ** 2 + mu ** 2
    return 1j * w / denom, mu / denom + 0j


def log_2cosh(x: float) -> float:
    x = abs(x)
    return x + math.log1p(math.exp(-2 * x))


# ============================================================================
# Data types
# ============================================================================

@dataclass(frozen=True)
class ThermalGreen:
    """G_LL(tau) and real-gauge G_LR(tau) on the midpoints of [0, beta)."""

    g_ll: np.ndarray
    g_lr: np.ndarray
    grid: TauGrid

    def stacked(self) -> np.ndarray:
        return np.stack([self.g_ll, self.g_lr])

    @classmethod
    def from_stacked(cls, state: np.ndarray, grid: TauGrid) -> ThermalGreen:
        return cls(g_ll=np.array(state[0]), g_lr=np.array(state[1]), grid=grid)

    def resampled(self, grid: TauGrid) -> ThermalGreen:
        """Same shape in tau/beta on another grid."""
        if grid.slices_m == self.grid.slices_m:
            return ThermalGreen(self.g_ll.copy(), self.g_lr.copy(), grid)
        old = (np.arange(self.grid.slices_m) + 0.5) / self.grid.slices_m
        new = (np.arange(grid.slices_m) + 0.5) / grid.slices_m
        return ThermalGreen(np.interp(new, old, self.g_ll), np.interp(new, old, self.g_lr), grid)


@dataclass(frozen=True)
class ThermalSaddle:
    """Converged (or best) thermal saddle at one (params, grid)."""

    params: ModelParams
    green: ThermalGreen
    self_energy: ThermalGreen
    ln_z: float
    """ln Z_beta for all N pairs"""

    action: float
    """S_beta = -ln Z_beta"""

    converged: bool
    iterations: int
    residual: float
    branch_tag: str

    @property
    def action_per_n(self) -> float:
        return self.action / self.params.n_per_side

    def to_dict(self) -> Dict:
        return {
            "beta": self.params.beta,
            "ln_z": self.ln_z,
            "action": self.action,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "branch": self.branch_tag,
        }


# ============================================================================
# Solver
# ============================================================================

class ThermalSolver(DampedFixedPointSolver):
    """Damped Matsubara iteration for the two-flavor thermal saddle."""

    def __init__(self, params: ModelParams, grid: TauGrid, tol: float, max_iter: int, damping: float):
        super().__init__(tol=tol, max_iter=max_iter, damping=damping)
        self.params = params
        self.grid = grid
        self.freq = matsubara_frequencies(grid)
        self.free_tau = free_green_tau(grid, params.hopping_mu)
        self.free_freq = free_green_freq(grid, params.hopping_mu)

    @property
    def path_integral(self) -> str:
        return "thermal"

    def kernel(self, state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal entries (a, b) of K(i w_n)."""
        j2 = self.params.coupling_j ** 2
        sigma_ll = to_frequency(j2 * state[0] ** 3, self.grid)
        sigma_lr = to_frequency(-j2 * state[1] ** 3, self.grid)
        return -1j * self.freq - sigma_ll, self.params.hopping_mu - sigma_lr

    def propose(self, state: np.ndarray, iteration: int) -> np.ndarray:
        a, b = self.kernel(state)
        det = a ** 2 - b ** 2
        g_ll = to_time(a / det - self.free_freq[0], self.grid).real + self.free_tau[0]
        g_lr = to_time(-b / det - self.free_freq[1], self.grid).real + self.free_tau[1]
        return np.stack([g_ll, g_lr])


def _resolve_settings(settings: Optional[SolverSettings]) -> SolverSettings:
    return settings if settings is not None else get_settings()


def _log_partition_per_pair(params: ModelParams, green: ThermalGreen) -> float:
    """Free two-level value + determinant ratio + high-frequency tail - quartic term."""
    grid = green.grid
    mu = params.hopping_mu
    free = log_2cosh(params.beta * mu / 2)
    if params.coupling_j == 0:
        return free
    solver = ThermalSolver(params, grid, tol=1.0, max_iter=1, damping=1.0)
    a, b = solver.kernel(green.stacked())
    w = solver.freq
    ratio = (a ** 2 - b ** 2) / (-(w ** 2) - mu ** 2)
    det_term = 0.5 * float(np.sum(np.log(np.abs(ratio))))
    j2 = params.coupling_j ** 2
    tail = j2 * grid.beta ** 2 / (4 * math.pi ** 2 * grid.slices_m)
    quartic = 0.375 * grid.beta * j2 * 2 * grid.dtau * float(np.sum(green.g_ll ** 4 + green.g_lr ** 4))
    return free + det_term + tail - quartic


def _infinite_temperature(params: ModelParams, grid: TauGrid) -> ThermalSaddle:
    half = np.full(grid.slices_m, 0.5)
    zeros = np.zeros(grid.slices_m)
    ln_z = params.n_per_side * math.log(2)
    return ThermalSaddle(
        params=params,
        green=ThermalGreen(half, zeros.copy(), grid),
        self_energy=ThermalGreen(params.coupling_j ** 2 * half ** 3, zeros.copy(), grid),
        ln_z=ln_z,
        action=-ln_z,
        converged=True,
        iterations=0,
        residual=0.0,
        branch_tag=BLACK_HOLE,
    )


InitSpec = Union[str, ThermalSaddle]


def solve_thermal(
    params: ModelParams,
    grid: TauGrid,
    init: InitSpec = FREE_SEED,
    settings: Optional[SolverSettings] = None,
) -> ThermalSaddle:
    """
    Solve the thermal saddle.

    Args:
        init: "free" / "wormhole-seed" (J=0 solution at the same beta, mu),
            "black-hole-seed" (converged mu=0 SYK solution), or a saddle to
            warm-start from (its shape in tau/beta is reused)

    Raises:
        ParameterError for invalid inputs or an unknown init
        SolverDivergedError on a non-finite update
    """
    checked = validate_params(params, grid)
    if checked.infinite_temperature:
        return _infinite_temperature(params, grid)
    settings = _resolve_settings(settings)

    if isinstance(init, ThermalSaddle):
        initial = init.green.resampled(grid).stacked()
        tag = init.branch_tag
    elif init in (FREE_SEED, WORMHOLE_SEED):
        initial = np.stack(free_green_tau(grid, params.hopping_mu))
        tag = WORMHOLE
    elif init == BLACK_HOLE_SEED:
        decoupled = solve_thermal(params.with_mu(0.0), grid, FREE_SEED, settings)
        initial = decoupled.green.stacked()
        tag = BLACK_HOLE
    else:
        raise ParameterError(f"unknown thermal init {init!r}")

    logger.info(
        "Solving thermal saddle: beta*J=%.4g mu=%.4g M=%d init=%s",
        params.beta_j, params.hopping_mu, grid.slices_m,
        init if isinstance(init, str) else "warm-start",
    )
    solver = ThermalSolver(params, grid, settings.thermal_tol, settings.max_iter, settings.damping)
    record = solver.iterate(initial)
    return _saddle_from_record(params, grid, record, tag)


def _saddle_from_record(params: ModelParams, grid: TauGrid, record: IterationRecord, tag: str) -> ThermalSaddle:
    green = ThermalGreen.from_stacked(record.state, grid)
    j2 = params.coupling_j ** 2
    sigma = ThermalGreen(j2 * green.g_ll ** 3, -j2 * green.g_lr ** 3, grid)
    ln_z = params.n_per_side * _log_partition_per_pair(params, green)
    if record.converged:
        logger.info("Thermal saddle converged in %d iterations: S_beta/N=%.10f",
                    record.iterations, -ln_z / params.n_per_side)
    return ThermalSaddle(
        params=params,
        green=green,
        self_energy=sigma,
        ln_z=ln_z,
        action=-ln_z,
        converged=record.converged,
        iterations=record.iterations,
        residual=record.residual,
        branch_tag=tag,
    )


def ln_z(params: ModelParams, saddle: ThermalSaddle) -> float:
    """
    ln Z_beta of a converged saddle.

    Raises:
        UnconvergedSaddleError if the saddle did not converge
    """
    if not saddle.converged:
        raise UnconvergedSaddleError(
            f"thermal saddle at beta={params.beta} stopped with residual {saddle.residual:.3e}"
        )
    if params.beta == 0:
        return params.n_per_side * math.log(2)
    return params.n_per_side * _log_partition_per_pair(params, saddle.green)


def dominant_thermal(
    params: ModelParams,
    grid: TauGrid,
    settings: Optional[SolverSettings] = None,
) -> ThermalSaddle:
    """Smaller-S_beta saddle of the wormhole- and black-hole-seeded solves."""
    candidates = [solve_thermal(params, grid, seed, settings) for seed in (WORMHOLE_SEED, BLACK_HOLE_SEED)]
    converged = [c for c in candidates if c.converged]
    if converged:
        return min(converged, key=lambda c: c.action)
    logger.warning("No thermal branch converged at beta=%.6g; returning the smaller residual", params.beta)
    return min(candidates, key=lambda c: c.residual)


def renyi2(params: ModelParams, grid: TauGrid, settings: Optional[SolverSettings] = None) -> float:
    """S_2 = S_{2 beta} - 2 S_beta, each from its own dominant branch."""
    return thermal_reference(params, grid, settings=settings).s2_per_n * params.n_per_side


# ============================================================================
# Thermal references for the M2 assembly
# ============================================================================

@dataclass(frozen=True)
class ThermalReference:
    """Dominant S_beta and S_{2 beta} per pair."""

    s_beta_per_n: float
    s_2beta_per_n: float
    converged: bool
    method: str

    @property
    def s2_per_n(self) -> float:
        return self.s_2beta_per_n - 2 * self.s_beta_per_n


def thermal_reference(
    params: ModelParams,
    grid: TauGrid,
    method: str = "contour",
    settings: Optional[SolverSettings] = None,
) -> ThermalReference:
    """
    S_beta and S_{2 beta} per pair from the dominant thermal branches.

    method="contour" evaluates both on the dense contour used by the SRE
    solver, so the discretization of S_SRE and 4 S_beta match.
    """
    if params.beta == 0:
        return ThermalReference(-math.log(2), -math.log(2), True, method)
    doubled = params.with_beta(2 * params.beta)
    results = []
    for p, g in ((params, grid), (doubled, grid.doubled())):
        if method == "matsubara":
            saddle = dominant_thermal(p, g, settings)
            results.append((saddle.action_per_n, saddle.converged))
        elif method == "contour":
            contour = dominant_thermal_contour(p, g, settings)
            results.append((contour.action_per_n, contour.converged))
        else:
            raise ParameterError(f"unknown thermal reference method {method!r}")
    return ThermalReference(
        s_beta_per_n=results[0][0],
        s_2beta_per_n=results[1][0],
        converged=results[0][1] and results[1][1],
        method=method,
    )


# ============================================================================
# Hawking-Page scan and thermodynamics
# ============================================================================

@dataclass(frozen=True)
class HawkingPageScan:
    black_hole: BranchCurve
    wormhole: BranchCurve
    transition: TransitionEstimate


def hp_scan(
    params: ModelParams,
    beta_grid: Sequence[float],
    grid_policy: GridPolicy,
    settings: Optional[SolverSettings] = None,
) -> HawkingPageScan:
    """
    Continue the black-hole branch upward and the wormhole branch downward in beta.

    Returns both curves and the transition estimate (method "crossover" when
    the branches never coexist).
    """
    from coupled_syk_sre.sweep_driver import locate_transition, sweep

    black_hole, wormhole = sweep(
        params, beta_grid, target="thermal", seeds=(BLACK_HOLE_SEED, WORMHOLE_SEED),
        grid_policy=grid_policy, settings=settings,
    )
    transition = locate_transition(black_hole, wormhole, kind="HP")
    logger.info("Hawking-Page scan at mu=%.4g: %s", params.hopping_mu, transition.describe())
    return HawkingPageScan(black_hole=black_hole, wormhole=wormhole, transition=transition)


@dataclass(frozen=True)
class Thermodynamics:
    """Energy and entropy of the whole system from one saddle."""

    beta: float
    ln_z: float
    energy: float
    entropy: float
    converged: bool
    saddle: ThermalSaddle
    """Central saddle, reusable as a warm start"""


def thermal_entropy(
    params: ModelParams,
    slices_m: int,
    init: InitSpec = BLACK_HOLE_SEED,
    relative_step: float = 1e-3,
    settings: Optional[SolverSettings] = None,
) -> Thermodynamics:
    """
    E = -d ln Z / d beta by a central difference at fixed M; S = ln Z + beta E.

    The neighbors are warm-started from the central saddle so all three lie
    on the same branch.
    """
    if params.beta <= 0:
        raise ParameterError("thermal_entropy needs beta > 0")
    center = solve_thermal(params, TauGrid.for_beta(params.beta, slices_m), init, settings)
    step = relative_step * params.beta
    sides = []
    for beta in (params.beta - step, params.beta + step):
        p = params.with_beta(beta)
        sides.append(solve_thermal(p, TauGrid.for_beta(beta, slices_m), center, settings))
    energy = -(sides[1].ln_z - sides[0].ln_z) / (2 * step)
    return Thermodynamics(
        beta=params.beta,
        ln_z=center.ln_z,
        energy=energy,
        entropy=center.ln_z + params.beta * energy,
        converged=center.converged and all(s.converged for s in sides),
        saddle=center,
    )


@dataclass(frozen=True)
class ZeroTemperatureEntropy:
    """Linear fit of the entropy density against 1/(beta J)."""

    s0: float
    slope: float
    beta_j: np.ndarray
    entropy_density: np.ndarray
    converged: bool


def extract_s0(
    beta_j_values: Sequence[float],
    slices_m: int,
    coupling_j: float = 1.0,
    settings: Optional[SolverSettings] = None,
) -> ZeroTemperatureEntropy:
    """
    Zero-temperature entropy density of one SYK cluster at mu = 0.

    The density is S / (2 N_q): two decoupled clusters of N Majoranas each.
    """
    if len(beta_j_values) < 2:
        raise ParameterError("extract_s0 needs at least two beta*J values")
    densities = []
    converged = True
    previous: Optional[ThermalSaddle] = None
    for beta_j in sorted(beta_j_values):
        params = ModelParams(1, coupling_j, 0.0, beta_j / coupling_j)
        init: InitSpec = previous if previous is not None else FREE_SEED
        thermo = thermal_entropy(params, slices_m, init=init, settings=settings)
        previous = thermo.saddle
        densities.append(thermo.entropy / 2)
        converged = converged and thermo.converged
    beta_j = np.array(sorted(beta_j_values), dtype=float)
    slope, intercept = np.polyfit(1.0 / beta_j, np.array(densities), 1)
    logger.info("Zero-temperature entropy fit: s0=%.5f", intercept)
    return ZeroTemperatureEntropy(
        s0=float(intercept),
        slope=float(slope),
        beta_j=beta_j,
        entropy_density=np.array(densities),
        converged=converged,
    )


# ============================================================================
# Dense contour variant
# ============================================================================

@dataclass(frozen=True)
class ContourThermalSaddle:
    """Thermal saddle on the dense two-time contour (one untwisted replica)."""

    params: ModelParams
    grid: TauGrid
    green: np.ndarray
    """2M x 2M real-gauge G(tau, tau')"""

    ln_z: float
    converged: bool
    iterations: int
    residual: float
    branch_tag: str

    @property
    def action(self) -> float:
        return -self.ln_z

    @property
    def action_per_n(self) -> float:
        return -self.ln_z / self.params.n_per_side


class ContourThermalSolver(DampedFixedPointSolver):
    """G <- (1 - dtau^2 G0 Sigma)^{-1} G0 on one antiperiodic circle."""

    def __init__(self, params: ModelParams, grid: TauGrid, tol: float, max_iter: int, damping: float):
        super().__init__(tol=tol, max_iter=max_iter, damping=damping)
        self.params = params
        self.free = free_contour(grid, params.hopping_mu, None, n_replicas=1)

    @property
    def path_integral(self) -> str:
        return "thermal-contour"

    def propose(self, state: np.ndarray, iteration: int) -> np.ndarray:
        sigma = self_energy(state, self.params.coupling_j, 2)
        factor = factor_sector(self.free, sigma, iteration=iteration)
        return enforce_skew(factor.g, 2)

    def log_partition_per_pair(self, g: np.ndarray) -> float:
        sigma = self_energy(g, self.params.coupling_j, 2)
        factor = factor_sector(self.free, sigma)
        quartic = quartic_sum(g, self.free.grid.dtau)
        return factor.log_weight(self.free) - 0.375 * self.params.coupling_j ** 2 * quartic


def solve_thermal_contour(
    params: ModelParams,
    grid: TauGrid,
    init: Optional[ThermalSaddle] = None,
    settings: Optional[SolverSettings] = None,
) -> ContourThermalSaddle:
    """
    Thermal saddle with the same discretization as the SRE solver.

    Seeded from a Matsubara saddle when given (its tag is kept), otherwise
    from the free propagator.
    """
    checked = validate_params(params, grid)
    if checked.infinite_temperature:
        raise ParameterError("the dense contour needs beta > 0")
    settings = _resolve_settings(settings)
    solver = ContourThermalSolver(params, grid, settings.sre_tol, settings.max_iter, settings.damping)
    if init is not None:
        seed = init.green.resampled(grid)
        initial = thermal_block(seed.g_ll, seed.g_lr, grid.beta, grid)
        tag = init.branch_tag
    else:
        initial = solver.free.g0.copy()
        tag = WORMHOLE
    record = solver.iterate(initial)
    ln_z_total = params.n_per_side * solver.log_partition_per_pair(record.state)
    return ContourThermalSaddle(
        params=params,
        grid=grid,
        green=record.state,
        ln_z=ln_z_total,
        converged=record.converged,
        iterations=record.iterations,
        residual=record.residual,
        branch_tag=tag,
    )


def dominant_thermal_contour(
    params: ModelParams,
    grid: TauGrid,
    settings: Optional[SolverSettings] = None,
) -> ContourThermalSaddle:
    """Contour solves seeded from both Matsubara branches; smaller action wins."""
    candidates: List[ContourThermalSaddle] = []
    for seed in (WORMHOLE_SEED, BLACK_HOLE_SEED):
        matsubara = solve_thermal(params, grid, seed, settings)
        candidates.append(solve_thermal_contour(params, grid, matsubara, settings))
    converged = [c for c in candidates if c.converged]
    pool = converged if converged else candidates
    return min(pool, key=lambda c: c.action)
