"""
Large-N solver for the replicated stabilizer-Rényi path integral.

Core Concepts:
- Four replicas of one L/R pair live on a dense contour of 8 flavors x M slices.
  Replicas (1,2) and (3,4) are joined at tau=0 by the fermionic SWAP twist of
  a sector (sigma_L, sigma_R).
- Each sector's propagator is g = (1 - dtau^2 G0 Sigma)^{-1} G0 with weight
  z_sigma det(1 - dtau^2 G0 Sigma)^{1/2}; the replica Green's function is the
  weighted sector average and Sigma = J^2 G^3 closes the loop.
- S_SRE / N = -ln sum_sigma W_sigma + (3/8) J^2 sum_{alpha beta} int int G^4 and
  M2 / N = S_SRE / N - 4 S_beta / N + ln 2.
"""

from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import logsumexp
from typing_extensions import TypeAlias

from coupled_syk_sre.contour import (
    N_REPLICAS,
    FreeContour,
    enforce_skew,
    factor_sector,
    free_contour,
    quartic_sum,
    replica_block,
    replica_embed,
    self_energy,
    thermal_block,
)
from coupled_syk_sre.domain import (
    ALL_SECTORS,
    REDUCED_SECTORS,
    ModelParams,
    OracleMismatchError,
    ParameterError,
    SectorLabel,
    TauGrid,
    UnconvergedSaddleError,
    validate_params,
)
from coupled_syk_sre.thermal_solver import ThermalReference, dominant_thermal, thermal_reference
from utils.saddle_interface import DampedFixedPointSolver
from utils.solver_config import SolverSettings, get_settings

logger = logging.getLogger(__name__)

CONNECTED = "replica-connected"
DISCONNECTED = "replica-disconnected"
INDETERMINATE = "indeterminate"

DISCONNECTED_SEED = "disconnected-seed"
CONNECTED_SEED = "connected-seed"

PAIRING_TOLERANCE = 1e-8
MAX_CHECK_SLICES = 128


# ============================================================================
# Contour topology
# ============================================================================

@dataclass(frozen=True)
class SectorTopology:
    """
    Junction rules at tau=0: psi^(1) -> sigma psi^(2) and psi^(2) -> -sigma psi^(1),
    likewise for (3,4), with sigma = sigma_L on L flavors and sigma_R on R flavors.

    sector=None removes the junctions (four disjoint antiperiodic circles).
    """

    sector: Optional[SectorLabel]
    joined_pairs: Tuple[Tuple[int, int], ...] = ((0, 1), (2, 3))

    @property
    def joined(self) -> bool:
        return self.sector is not None

    def spin(self, side: int) -> int:
        if self.sector is None:
            return 0
        return self.sector.sigma_l if side == 0 else self.sector.sigma_r

    def junction_sign(self, side: int, source: int, target: int) -> int:
        """Sign picked up when a `side` fermion passes from replica `source` into `target`."""
        if not self.joined:
            return -1 if source == target else 0
        for first, second in self.joined_pairs:
            if (source, target) == (first, second):
                return self.spin(side)
            if (source, target) == (second, first):
                return -self.spin(side)
        return 0

    def loop_sign(self, side: int, first: int = 0) -> int:
        """Product of signs around a closed loop; -1 is antiperiodicity."""
        if not self.joined:
            return self.junction_sign(side, first, first)
        partner = next(b if a == first else a for a, b in self.joined_pairs if first in (a, b))
        return self.junction_sign(side, first, partner) * self.junction_sign(side, partner, first)


@functools.lru_cache(maxsize=2)
def build_kinetic(grid: TauGrid, sector: Optional[SectorLabel], mu: float, junctions: bool = True) -> FreeContour:
    """
    Free four-replica contour of one pair for a sector.

    The free propagator plays the role of the inverse kinetic operator; its
    weight z_sigma = (Z^4/4)(1 + sigma_L sigma_R tanh^2(beta mu/2))^2 pins the
    J=mu=0 anchor S_SRE/N = -4 ln 2 at every M. With junctions=False the
    replicas decouple into four thermal circles.
    """
    return free_contour(grid, mu, sector if junctions else None, n_replicas=N_REPLICAS)


# ============================================================================
# Data types
# ============================================================================

@dataclass(frozen=True)
class SectorGreen:
    """Dressed propagator of one sector."""

    sector: SectorLabel
    g: np.ndarray
    """Replica-(1,1) block, 2M x 2M over (side, tau)"""

    log_det: float
    """ln det g, normalized so that exp(-log_det / 2) is the sector weight W_sigma"""

    full: Optional[np.ndarray] = field(default=None, repr=False)
    """Every (side, replica, tau) column, in full-replica mode"""

    def paired(self) -> SectorGreen:
        """The (-sigma_L, -sigma_R) partner; its replica-diagonal blocks and determinant coincide."""
        return SectorGreen(self.sector.paired(), self.g, self.log_det, None)


@dataclass(frozen=True)
class ReplicaGreen:
    """G^(alpha beta)_{ss'}(tau, tau') in the real gauge."""

    g: np.ndarray
    """2M x 2M replica-diagonal block, or the 8M x 8M tensor in full mode"""

    grid: TauGrid
    converged: bool = True

    @property
    def full_mode(self) -> bool:
        return self.g.shape[0] == 2 * N_REPLICAS * self.grid.slices_m

    @property
    def n_flavors(self) -> int:
        return 2 * N_REPLICAS if self.full_mode else 2

    def diagonal_block(self) -> np.ndarray:
        if self.full_mode:
            return replica_block(self.g, 0, 0, self.grid.slices_m)
        return self.g

    def off_diagonal_norm(self) -> float:
        """max over alpha != beta of max |G^(alpha beta)|; zero in replica-diagonal mode."""
        if not self.full_mode:
            return 0.0
        m = self.grid.slices_m
        return max(
            float(np.max(np.abs(replica_block(self.g, a, b, m))))
            for a in range(N_REPLICAS) for b in range(N_REPLICAS) if a != b
        )

    def resampled(self, grid: TauGrid) -> ReplicaGreen:
        """Replica-diagonal block on another grid, keeping its shape in tau/beta."""
        block = self.diagonal_block()
        if grid.slices_m == self.grid.slices_m:
            return ReplicaGreen(block.copy(), grid, self.converged)
        old_m, new_m = self.grid.slices_m, grid.slices_m
        old = (np.arange(old_m) + 0.5) / old_m
        new = (np.arange(new_m) + 0.5) / new_m
        mesh = np.stack(np.meshgrid(new, new, indexing="ij"), axis=-1)
        out = np.empty((2 * new_m, 2 * new_m))
        for s in range(2):
            for t in range(2):
                values = block[s * old_m:(s + 1) * old_m, t * old_m:(t + 1) * old_m]
                interp = RegularGridInterpolator((old, old), values, bounds_error=False, fill_value=None)
                out[s * new_m:(s + 1) * new_m, t * new_m:(t + 1) * new_m] = interp(mesh)
        return ReplicaGreen(enforce_skew(out, 2), grid, self.converged)


@dataclass(frozen=True)
class SelfEnergy:
    """Sigma = J^2 G^3 on the same index set as its ReplicaGreen."""

    sigma: np.ndarray
    coupling_j: float
    grid: TauGrid

    @classmethod
    def from_green(cls, green: ReplicaGreen, coupling_j: float) -> SelfEnergy:
        return cls(self_energy(green.g, coupling_j, green.n_flavors), coupling_j, green.grid)

    def residual(self, green: ReplicaGreen) -> float:
        """max |Sigma - J^2 G^3|."""
        return float(np.max(np.abs(self.sigma - self_energy(green.g, self.coupling_j, green.n_flavors))))


@dataclass(frozen=True)
class SreSaddleResult:
    """Saddle of the replicated path integral at one (params, grid)."""

    params: ModelParams
    grid: TauGrid
    green: ReplicaGreen
    self_energy: SelfEnergy
    sector_greens: Tuple[SectorGreen, ...]
    sector_weights: Dict[SectorLabel, float]
    s_sre_per_n: float
    s_beta_per_n: float
    s2_per_n: float
    m2_per_n: float
    m2_tilde_per_n: float
    branch_tag: str
    converged: bool
    iterations: int
    residual: float
    bistable: bool = False
    idempotence_residual: float = 0.0
    """max |G - F(G)| of one extra update at the returned point"""

    @property
    def s_sre(self) -> float:
        return self.s_sre_per_n * self.params.n_per_side

    @property
    def m2(self) -> float:
        return self.m2_per_n * self.params.n_per_side

    @property
    def m2_tilde(self) -> float:
        return self.m2_tilde_per_n * self.params.n_per_side

    def to_dict(self) -> Dict:
        return {
            "beta": self.params.beta,
            "s_sre_per_n": self.s_sre_per_n,
            "m2_per_n": self.m2_per_n,
            "m2_tilde_per_n": self.m2_tilde_per_n,
            "branch": self.branch_tag,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "bistable": self.bistable,
            "weights": {str(k): v for k, v in self.sector_weights.items()},
        }


# ============================================================================
# Sector solves and weights
# ============================================================================

def solve_sector(
    sigma: SectorLabel,
    self_energy_: SelfEnergy,
    kinetic: FreeContour,
    iteration: int = 0,
) -> SectorGreen:
    """
    g_sigma = (1 - dtau^2 G0_sigma Sigma)^{-1} G0_sigma by one LU factorization.

    A replica-diagonal self-energy only needs the replica-1 columns; a full
    one returns every column.

    Raises:
        SingularSectorError naming the sector and iteration
    """
    width = 2 * kinetic.grid.slices_m
    full_mode = self_energy_.sigma.shape[0] != width
    factor = factor_sector(kinetic, self_energy_.sigma, iteration=iteration, all_columns=full_mode)
    return SectorGreen(
        sector=sigma,
        g=factor.g[:width, :width],
        log_det=-2.0 * factor.log_weight(kinetic),
        full=factor.g if full_mode else None,
    )


def sector_weights(log_dets: Sequence[float]) -> np.ndarray:
    """
    w_sigma = exp(-log_det_sigma / 2) / sum, evaluated with logsumexp.

    Raises:
        ParameterError if no log-determinant is finite
    """
    log_dets = np.asarray(log_dets, dtype=float)
    if not np.any(np.isfinite(log_dets)):
        raise ParameterError("all sector log-determinants are infinite")
    exponents = np.where(np.isfinite(log_dets), -0.5 * log_dets, -np.inf)
    return np.exp(exponents - logsumexp(exponents))


def pairing_gap(sector_greens: Sequence[SectorGreen]) -> float:
    """max |log_det(sigma) - log_det(-sigma)| over the solved sectors."""
    by_sector = {sg.sector: sg.log_det for sg in sector_greens}
    gaps = [abs(v - by_sector[s.paired()]) for s, v in by_sector.items() if s.paired() in by_sector]
    return max(gaps) if gaps else 0.0


# ============================================================================
# Fixed-point loop
# ============================================================================

class SreSolver(DampedFixedPointSolver):
    """Damped iteration of the sector-summed replica saddle."""

    def __init__(
        self,
        params: ModelParams,
        grid: TauGrid,
        tol: float,
        max_iter: int,
        damping: float,
        debug_sectors: bool = False,
        full_mode: bool = False,
        junctions: bool = True,
        threads: int = 1,
        diagnostic_every: int = 25,
    ):
        super().__init__(tol=tol, max_iter=max_iter, damping=damping)
        self.params = params
        self.grid = grid
        self.debug_sectors = debug_sectors
        self.full_mode = full_mode
        self.threads = threads
        self.diagnostic_every = diagnostic_every
        self.sectors = ALL_SECTORS if (debug_sectors or full_mode) else REDUCED_SECTORS
        self.kinetics = {s: build_kinetic(grid, s, params.hopping_mu, junctions) for s in self.sectors}
        self.diagnostic_tags: List[str] = []
        self.max_pairing_gap = 0.0

    @property
    def path_integral(self) -> str:
        return "sre-full" if self.full_mode else "sre"

    @property
    def n_flavors(self) -> int:
        return 2 * N_REPLICAS if self.full_mode else 2

    def solve_all(self, state: np.ndarray, iteration: int = 0) -> Tuple[Tuple[SectorGreen, ...], np.ndarray, np.ndarray]:
        """Sector greens (all four, in ALL_SECTORS order), weights and the averaged G."""
        sigma = SelfEnergy(self_energy(state, self.params.coupling_j, self.n_flavors),
                           self.params.coupling_j, self.grid)

        def run(sector: SectorLabel) -> SectorGreen:
            return solve_sector(sector, sigma, self.kinetics[sector], iteration)

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(self.sectors))) as pool:
                solved = list(pool.map(run, self.sectors))
        else:
            solved = [run(s) for s in self.sectors]

        if self.debug_sectors and not self.full_mode:
            gap = pairing_gap(solved)
            self.max_pairing_gap = max(self.max_pairing_gap, gap)
            if gap > PAIRING_TOLERANCE:
                raise OracleMismatchError(f"sector pairing broken at iteration {iteration}: gap {gap:.3e}")

        by_sector = {sg.sector: sg for sg in solved}
        for sg in solved:
            by_sector.setdefault(sg.sector.paired(), sg.paired())
        ordered = tuple(by_sector[s] for s in ALL_SECTORS)
        weights = sector_weights([sg.log_det for sg in ordered])

        if self.full_mode:
            averaged = sum(w * sg.full for w, sg in zip(weights, ordered))
        else:
            averaged = sum(w * sg.g for w, sg in zip(weights, ordered))
        return ordered, weights, enforce_skew(averaged, self.n_flavors)

    def propose(self, state: np.ndarray, iteration: int) -> np.ndarray:
        _, _, averaged = self.solve_all(state, iteration)
        return averaged

    def on_iteration(self, iteration: int, state: np.ndarray, residual: float) -> None:
        if self.full_mode or iteration % self.diagnostic_every:
            return
        self.diagnostic_tags.append(connectivity_diagnostic(ReplicaGreen(state, self.grid)))

    def branch_flips(self) -> int:
        tags = [t for t in self.diagnostic_tags if t != INDETERMINATE]
        return sum(1 for a, b in zip(tags, tags[1:]) if a != b)


def action_sre(
    sector_greens: Sequence[SectorGreen],
    green: ReplicaGreen,
    self_energy_: SelfEnergy,
    require_converged: bool = True,
) -> float:
    """
    S_SRE per pair: -ln sum_sigma W_sigma + (3/8) J^2 dtau^2 sum G^4 over all replica blocks.

    The quartic term uses the same midpoint quadrature as the Sigma update.

    Raises:
        UnconvergedSaddleError for an unconverged green when require_converged
    """
    if require_converged and not green.converged:
        raise UnconvergedSaddleError("action_sre needs a converged replica Green's function")
    log_weights = -0.5 * np.array([sg.log_det for sg in sector_greens])
    j2 = self_energy_.coupling_j ** 2
    if green.full_mode:
        quartic = quartic_sum(green.g, green.grid.dtau)
    else:
        quartic = N_REPLICAS * quartic_sum(green.g, green.grid.dtau)
    return float(-logsumexp(log_weights) + 0.375 * j2 * quartic)


def connectivity_diagnostic(green: ReplicaGreen, high: float = 0.35, low: float = 0.15) -> str:
    """
    Classify a saddle by |G^(11)_LL(0+, beta-)|.

    Above `high` the replicas act as separate thermal circles; below `low`
    with a monotonically decaying row tail they are connected; anything
    else is reported as indeterminate.
    """
    m = green.grid.slices_m
    row = np.abs(green.diagonal_block()[0, :m])
    edge = float(row[m - 1])
    if edge > high:
        return DISCONNECTED
    if edge < low:
        tail = row[m // 2:]
        if np.all(np.diff(tail) <= 1e-12):
            return CONNECTED
    return INDETERMINATE


SreInit: TypeAlias = Union[str, SreSaddleResult, ReplicaGreen]


def _initial_block(params: ModelParams, grid: TauGrid, init: SreInit, settings: SolverSettings) -> np.ndarray:
    if isinstance(init, SreSaddleResult):
        return init.green.resampled(grid).g
    if isinstance(init, ReplicaGreen):
        return init.resampled(grid).g
    if init == DISCONNECTED_SEED:
        thermal = dominant_thermal(params, grid, settings)
        return thermal_block(thermal.green.g_ll, thermal.green.g_lr, grid.beta, grid)
    if init == CONNECTED_SEED:
        doubled = dominant_thermal(params.with_beta(2 * params.beta), grid.doubled(), settings)
        return thermal_block(doubled.green.g_ll, doubled.green.g_lr, 2 * grid.beta, grid)
    raise ParameterError(f"unknown SRE init {init!r}")


def _infinite_temperature(params: ModelParams, grid: TauGrid) -> SreSaddleResult:
    width = 2 * grid.slices_m
    green = ReplicaGreen(np.zeros((width, width)), grid)
    log_free = -2.0 * math.log(4.0)
    sectors = tuple(SectorGreen(s, green.g, log_free) for s in ALL_SECTORS)
    return SreSaddleResult(
        params=params,
        grid=grid,
        green=green,
        self_energy=SelfEnergy(np.zeros((width, width)), params.coupling_j, grid),
        sector_greens=sectors,
        sector_weights={s: 0.25 for s in ALL_SECTORS},
        s_sre_per_n=-4 * math.log(2),
        s_beta_per_n=-math.log(2),
        s2_per_n=math.log(2),
        m2_per_n=math.log(2),
        m2_tilde_per_n=0.0,
        branch_tag=DISCONNECTED,
        converged=True,
        iterations=0,
        residual=0.0,
    )


def iterate_sre(
    params: ModelParams,
    grid: TauGrid,
    init: SreInit = DISCONNECTED_SEED,
    reference: Optional[ThermalReference] = None,
    thermal_method: str = "contour",
    settings: Optional[SolverSettings] = None,
    debug_sectors: bool = False,
    junctions: bool = True,
) -> SreSaddleResult:
    """
    Solve the replica-diagonal saddle and assemble S_SRE, M2 and M2 - S2.

    Args:
        init: "disconnected-seed" (thermal solution on each replica),
            "connected-seed" (2 beta thermal solution on the joined circles)
            or a previous result to continue from
        reference: dominant S_beta / S_{2 beta}; computed when omitted
        debug_sectors: solve all four sectors and check their pairing
        junctions: False removes the SWAP twists (disconnected contour)

    Returns:
        The converged saddle, or the best iterate flagged unconverged
    """
    checked = validate_params(params, grid)
    if checked.infinite_temperature:
        return _infinite_temperature(params, grid)
    settings = settings if settings is not None else get_settings()
    if reference is None:
        reference = thermal_reference(params, grid, thermal_method, settings)

    logger.info(
        "Solving SRE saddle: beta*J=%.4g mu=%.4g M=%d init=%s",
        params.beta_j, params.hopping_mu, grid.slices_m,
        init if isinstance(init, str) else "warm-start",
    )
    solver = SreSolver(
        params, grid, settings.sre_tol, settings.max_iter, settings.damping,
        debug_sectors=debug_sectors, junctions=junctions, threads=settings.threads,
    )
    record = solver.iterate(_initial_block(params, grid, init, settings))

    green = ReplicaGreen(record.state, grid, record.converged)
    sector_greens, weights, refreshed = solver.solve_all(record.state, record.iterations + 1)
    sigma = SelfEnergy.from_green(green, params.coupling_j)
    s_sre = action_sre(sector_greens, green, sigma, require_converged=False)
    m2 = s_sre - 4 * reference.s_beta_per_n + math.log(2)
    bistable = not record.converged and solver.branch_flips() > 0
    if bistable:
        logger.warning("SRE iteration bistable at beta*J=%.4g", params.beta_j)
    tag = connectivity_diagnostic(green)
    logger.info("SRE saddle %s after %d iterations: S_SRE/N=%.10f M2/N=%.10f (%s)",
                "converged" if record.converged else "NOT converged",
                record.iterations, s_sre, m2, tag)
    return SreSaddleResult(
        params=params,
        grid=grid,
        green=green,
        self_energy=sigma,
        sector_greens=sector_greens,
        sector_weights={s: float(w) for s, w in zip(ALL_SECTORS, weights)},
        s_sre_per_n=s_sre,
        s_beta_per_n=reference.s_beta_per_n,
        s2_per_n=reference.s2_per_n,
        m2_per_n=m2,
        m2_tilde_per_n=m2 - reference.s2_per_n,
        branch_tag=tag,
        converged=record.converged,
        iterations=record.iterations,
        residual=record.residual,
        bistable=bistable,
        idempotence_residual=float(np.max(np.abs(refreshed - record.state))),
    )


# ============================================================================
# Replica-symmetry verification
# ============================================================================

@dataclass(frozen=True)
class ReplicaCheckPoint:
    beta_j: float
    off_diagonal_norm: float
    converged: bool
    iterations: int


def full_replica_check(
    params: ModelParams,
    slices_m: int,
    beta_j_list: Sequence[float],
    perturbation: float = 0.0,
    seed: int = 0,
    settings: Optional[SolverSettings] = None,
) -> List[ReplicaCheckPoint]:
    """
    Iterate without the replica-diagonal ansatz and report max_{alpha != beta} |G^(alpha beta)|.

    Args:
        perturbation: amplitude of a random skew off-diagonal kick added to the seed

    Raises:
        ParameterError for grids above MAX_CHECK_SLICES slices
    """
    if slices_m > MAX_CHECK_SLICES:
        raise ParameterError(f"full replica check is limited to M <= {MAX_CHECK_SLICES}, got {slices_m}")
    if params.coupling_j <= 0:
        raise ParameterError("full replica check needs J > 0 to set beta from beta*J")
    settings = settings if settings is not None else get_settings()
    rng = np.random.default_rng(seed)
    report = []
    for beta_j in beta_j_list:
        p = params.with_beta(beta_j / params.coupling_j)
        grid = TauGrid.for_beta(p.beta, slices_m)
        validate_params(p, grid)
        start = replica_embed(_initial_block(p, grid, DISCONNECTED_SEED, settings))
        if perturbation:
            kick = enforce_skew(rng.standard_normal(start.shape), 2 * N_REPLICAS)
            for alpha in range(N_REPLICAS):
                width = 2 * slices_m
                kick[alpha * width:(alpha + 1) * width, alpha * width:(alpha + 1) * width] = 0.0
            start = start + perturbation * kick
        solver = SreSolver(p, grid, settings.sre_tol, settings.max_iter, settings.damping,
                           full_mode=True, threads=settings.threads)
        record = solver.iterate(start)
        norm = ReplicaGreen(record.state, grid, record.converged).off_diagonal_norm()
        logger.info("Full replica check beta*J=%.4g: off-diagonal %.3e", beta_j, norm)
        report.append(ReplicaCheckPoint(beta_j, norm, record.converged, record.iterations))
    return report
