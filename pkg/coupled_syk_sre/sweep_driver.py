"""
Beta sweeps with branch continuation, dominant-saddle selection and
transition location.

A branch is produced by continuing one seed along beta: each point is
warm-started from its converged neighbor. Branches of the same path
integral share the beta grid; selection, transition location and curve
assembly work pointwise on that grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from typing_extensions import Literal, TypeAlias

from coupled_syk_sre.domain import GridMismatchError, ModelParams, ParameterError, TauGrid
from coupled_syk_sre.sre_solver import CONNECTED_SEED, DISCONNECTED_SEED, iterate_sre
from coupled_syk_sre.thermal_solver import (
    BLACK_HOLE_SEED,
    WORMHOLE_SEED,
    ThermalReference,
    solve_thermal,
    thermal_reference,
)
from utils.solver_config import SolverSettings

logger = logging.getLogger(__name__)

GridPolicy: TypeAlias = Callable[[float], TauGrid]
SweepTarget: TypeAlias = Literal["thermal", "sre"]

# Seeds continued downward in beta; every other seed runs upward.
DOWNWARD_SEEDS = (WORMHOLE_SEED, CONNECTED_SEED)

OBSERVABLES = ("s_beta", "s2", "m2", "m2_tilde")


def fixed_slices(slices_m: int) -> GridPolicy:
    """Same number of slices at every beta."""
    return lambda beta: TauGrid.for_beta(beta, slices_m)


def fixed_dtau(dtau: float, min_slices: int = 8) -> GridPolicy:
    """Same slice width at every beta (rounded to an even slice count)."""
    def policy(beta: float) -> TauGrid:
        slices = max(min_slices, 2 * int(round(beta / dtau / 2)))
        return TauGrid.for_beta(beta, slices)
    return policy


def missing_partners(beta_grid: Sequence[float], rel_tol: float = 1e-9) -> List[float]:
    """Betas b <= max/2 whose partner 2b is not on the grid."""
    betas = sorted(beta_grid)
    if not betas:
        return []
    top = betas[-1]
    missing = []
    for b in betas:
        if b == 0 or 2 * b > top * (1 + rel_tol):
            continue
        if not any(abs(2 * b - other) <= rel_tol * max(1.0, other) for other in betas):
            missing.append(b)
    return missing


# ============================================================================
# Data types
# ============================================================================

@dataclass(frozen=True)
class BranchCurve:
    """One branch (or a dominant selection) sampled on a beta grid; values are per N."""

    beta_values: np.ndarray
    action_values: np.ndarray
    """S_SRE / N or S_beta / N"""

    observable_values: np.ndarray
    observable: str
    """One of OBSERVABLES"""

    seed_tag: str
    converged: np.ndarray
    branch_tags: Tuple[str, ...] = ()
    coupling_j: float = 1.0
    residuals: Optional[np.ndarray] = None
    extra: Dict[str, np.ndarray] = field(default_factory=dict)
    """Further per-point columns, e.g. s2 next to m2"""

    def __post_init__(self):
        n = len(self.beta_values)
        if len(self.action_values) != n or len(self.observable_values) != n or len(self.converged) != n:
            raise ParameterError("branch curve arrays must have equal length")
        if self.observable not in OBSERVABLES:
            raise ParameterError(f"unknown observable {self.observable!r}")

    def __len__(self) -> int:
        return len(self.beta_values)

    @property
    def beta_j(self) -> np.ndarray:
        return self.beta_values * self.coupling_j

    def value_at(self, beta: float, rel_tol: float = 1e-9) -> Tuple[float, float, bool]:
        """(action, observable, converged) at a grid beta."""
        idx = np.flatnonzero(np.abs(self.beta_values - beta) <= rel_tol * max(1.0, beta))
        if idx.size == 0:
            raise GridMismatchError(f"beta={beta} is not on the curve grid")
        i = int(idx[0])
        return float(self.action_values[i]), float(self.observable_values[i]), bool(self.converged[i])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "beta": [float(b) for b in self.beta_values],
            "action": [float(a) for a in self.action_values],
            self.observable: [float(v) for v in self.observable_values],
            "seed": self.seed_tag,
            "converged": [bool(c) for c in self.converged],
        }


@dataclass(frozen=True)
class TransitionEstimate:
    """Location of a first-order transition between two branches."""

    kind: str
    """SRE, HP or HP-half"""

    method: str
    """action-crossing, hysteresis-midpoint or crossover"""

    beta_star: Optional[float] = None
    bracket: Optional[Tuple[float, float]] = None
    low_confidence: bool = False

    @property
    def is_transition(self) -> bool:
        return self.beta_star is not None

    def describe(self) -> str:
        if not self.is_transition:
            return f"{self.kind}: no transition (crossover)"
        lo, hi = self.bracket
        note = " (low confidence)" if self.low_confidence else ""
        return f"{self.kind}: beta*={self.beta_star:.6g} in [{lo:.6g}, {hi:.6g}] by {self.method}{note}"

    def scaled(self, factor: float, kind: str) -> TransitionEstimate:
        """Same transition with beta scaled, e.g. beta*_HP / 2."""
        if not self.is_transition:
            return replace(self, kind=kind)
        lo, hi = self.bracket
        return replace(self, kind=kind, beta_star=self.beta_star * factor, bracket=(lo * factor, hi * factor))


# ============================================================================
# Sweeps
# ============================================================================

@dataclass
class _PointResult:
    action: float
    observable: float
    converged: bool
    tag: str
    residual: float
    payload: Any
    extra: Dict[str, float] = field(default_factory=dict)


def continue_branch(
    betas: Sequence[float],
    solve_point: Callable[[float, Optional[Any]], _PointResult],
    seed_tag: str,
    observable: str,
    ascending: bool = True,
    coupling_j: float = 1.0,
) -> BranchCurve:
    """
    Walk the grid in one direction, warm-starting from the last converged point.

    Failures are recorded as unconverged points; the chain restarts from the
    cold seed after a failure.
    """
    order = list(range(len(betas)))
    if not ascending:
        order.reverse()
    results: Dict[int, _PointResult] = {}
    previous = None
    for i in order:
        try:
            point = solve_point(betas[i], previous)
        except Exception as exc:
            logger.error("Branch %s failed at beta=%.6g: %s", seed_tag, betas[i], exc)
            point = _PointResult(math.nan, math.nan, False, "failed", math.inf, None)
        results[i] = point
        previous = point.payload if point.converged else None

    extra_keys = sorted({k for p in results.values() for k in p.extra})
    return BranchCurve(
        beta_values=np.asarray(betas, dtype=float),
        action_values=np.array([results[i].action for i in range(len(betas))]),
        observable_values=np.array([results[i].observable for i in range(len(betas))]),
        observable=observable,
        seed_tag=seed_tag,
        converged=np.array([results[i].converged for i in range(len(betas))], dtype=bool),
        branch_tags=tuple(results[i].tag for i in range(len(betas))),
        coupling_j=coupling_j,
        residuals=np.array([results[i].residual for i in range(len(betas))]),
        extra={k: np.array([results[i].extra.get(k, math.nan) for i in range(len(betas))]) for k in extra_keys},
    )


def sweep(
    params: ModelParams,
    beta_grid: Sequence[float],
    target: SweepTarget,
    seeds: Optional[Sequence[str]] = None,
    grid_policy: Optional[GridPolicy] = None,
    settings: Optional[SolverSettings] = None,
    references: Optional[Dict[float, ThermalReference]] = None,
    thermal_method: str = "contour",
    debug_sectors: bool = False,
) -> List[BranchCurve]:
    """
    One BranchCurve per seed strategy.

    Args:
        target: "thermal" (actions S_beta/N) or "sre" (actions S_SRE/N, observable M2/N)
        seeds: defaults to both seeds of the target; wormhole and connected
            seeds run downward in beta, the others upward
        references: thermal references keyed by beta for the M2 assembly
            (computed per point when missing)

    Raises:
        ParameterError for an unsorted grid or unknown target
    """
    betas = [float(b) for b in beta_grid]
    if any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise ParameterError("beta grid must be sorted")
    grid_policy = grid_policy or fixed_slices(256)
    references = references or {}

    if target == "thermal":
        seeds = tuple(seeds or (BLACK_HOLE_SEED, WORMHOLE_SEED))

        def make_solver(seed: str):
            def solve_point(beta: float, previous) -> _PointResult:
                p = params.with_beta(beta)
                saddle = solve_thermal(p, grid_policy(beta), previous if previous is not None else seed, settings)
                per_n = saddle.action_per_n
                return _PointResult(per_n, per_n, saddle.converged, saddle.branch_tag, saddle.residual, saddle)
            return solve_point

        observable = "s_beta"
    elif target == "sre":
        seeds = tuple(seeds or (DISCONNECTED_SEED, CONNECTED_SEED))

        def make_solver(seed: str):
            def solve_point(beta: float, previous) -> _PointResult:
                p = params.with_beta(beta)
                result = iterate_sre(
                    p, grid_policy(beta), previous if previous is not None else seed,
                    reference=references.get(beta), thermal_method=thermal_method,
                    settings=settings, debug_sectors=debug_sectors,
                )
                return _PointResult(
                    result.s_sre_per_n, result.m2_per_n, result.converged, result.branch_tag,
                    result.residual, result,
                    extra={"s2": result.s2_per_n, "m2_tilde": result.m2_tilde_per_n},
                )
            return solve_point

        observable = "m2"
    else:
        raise ParameterError(f"unknown sweep target {target!r}")

    curves = []
    for seed in seeds:
        logger.info("Sweeping %s branch from %s over %d betas", target, seed, len(betas))
        curves.append(continue_branch(
            betas, make_solver(seed), seed, observable,
            ascending=seed not in DOWNWARD_SEEDS, coupling_j=params.energy_unit,
        ))
    return curves


# ============================================================================
# Selection and transitions
# ============================================================================

def _same_grid(a: BranchCurve, b: BranchCurve) -> bool:
    return len(a) == len(b) and np.allclose(a.beta_values, b.beta_values, rtol=1e-12, atol=0.0)


def select_dominant(curves: Sequence[BranchCurve]) -> BranchCurve:
    """
    Pointwise smallest action among converged branches.

    Points where no branch converged are kept as unconverged gaps (NaN values).

    Raises:
        GridMismatchError if the curves do not share the beta grid
    """
    if not curves:
        raise ParameterError("select_dominant needs at least one curve")
    first = curves[0]
    for c in curves[1:]:
        if not _same_grid(first, c):
            raise GridMismatchError("branches must share the beta grid")
    n = len(first)
    actions = np.full(n, math.nan)
    observables = np.full(n, math.nan)
    converged = np.zeros(n, dtype=bool)
    tags: List[str] = []
    chosen: List[Optional[int]] = []
    for i in range(n):
        best = None
        for k, c in enumerate(curves):
            if c.converged[i] and (best is None or c.action_values[i] < curves[best].action_values[i]):
                best = k
        chosen.append(best)
        if best is None:
            tags.append("gap")
            continue
        actions[i] = curves[best].action_values[i]
        observables[i] = curves[best].observable_values[i]
        converged[i] = True
        tags.append(curves[best].seed_tag)
    keys = set.intersection(*(set(c.extra) for c in curves)) if curves else set()
    extra = {
        key: np.array([curves[k].extra[key][i] if k is not None else math.nan for i, k in enumerate(chosen)])
        for key in keys
    }
    return BranchCurve(
        beta_values=first.beta_values.copy(),
        action_values=actions,
        observable_values=observables,
        observable=first.observable,
        seed_tag="dominant",
        converged=converged,
        branch_tags=tuple(tags),
        coupling_j=first.coupling_j,
        extra=extra,
    )


def locate_transition(
    branch_a: BranchCurve,
    branch_b: BranchCurve,
    kind: str = "SRE",
    distinct_tol: float = 1e-5,
) -> TransitionEstimate:
    """
    Locate the transition between two branches of one path integral.

    Inside the window where both branches converged to distinct solutions,
    a sign change of the action difference gives an action-crossing estimate.
    Without a sign change the window midpoint is returned as a hysteresis
    estimate; without a window, the midpoint of the gap between the branches'
    converged ranges. Otherwise the result is a crossover. The result does
    not depend on the argument order.
    """
    if not _same_grid(branch_a, branch_b):
        raise GridMismatchError("branches must share the beta grid")
    betas = branch_a.beta_values
    both = branch_a.converged & branch_b.converged
    diff = branch_a.action_values - branch_b.action_values
    window = np.flatnonzero(both & (np.abs(np.nan_to_num(diff)) > distinct_tol))

    if window.size:
        for i, j in zip(window, window[1:]):
            if j == i + 1 and diff[i] * diff[j] < 0:
                lo, hi = betas[i], betas[j]
                star = lo - diff[i] * (hi - lo) / (diff[j] - diff[i])
                return TransitionEstimate(kind, "action-crossing", float(star), (float(lo), float(hi)))
        lo_i, hi_i = int(window[0]), int(window[-1])
        if lo_i == hi_i:
            lo_i, hi_i = max(lo_i - 1, 0), min(hi_i + 1, len(betas) - 1)
        lo, hi = float(betas[lo_i]), float(betas[hi_i])
        if hi > lo:
            return TransitionEstimate(kind, "hysteresis-midpoint", 0.5 * (lo + hi), (lo, hi), low_confidence=True)

    ends = []
    for curve in (branch_a, branch_b):
        idx = np.flatnonzero(curve.converged)
        if idx.size == 0:
            return TransitionEstimate(kind, "crossover")
        ends.append((float(betas[idx[0]]), float(betas[idx[-1]])))
    (a_lo, a_hi), (b_lo, b_hi) = sorted(ends)
    if a_hi < b_lo:
        return TransitionEstimate(kind, "hysteresis-midpoint", 0.5 * (a_hi + b_lo), (a_hi, b_lo), low_confidence=True)
    return TransitionEstimate(kind, "crossover")


# ============================================================================
# Curve assembly and post-processing
# ============================================================================

def assemble_sre_curve(m2_curve: BranchCurve, s2_curve: BranchCurve) -> BranchCurve:
    """
    M2_tilde / N = M2 / N - S2 / N pointwise.

    Raises:
        GridMismatchError if the curves are sampled on different betas
    """
    if not _same_grid(m2_curve, s2_curve):
        raise GridMismatchError("M2 and S2 curves must share the beta grid")
    return BranchCurve(
        beta_values=m2_curve.beta_values.copy(),
        action_values=m2_curve.action_values.copy(),
        observable_values=m2_curve.observable_values - s2_curve.observable_values,
        observable="m2_tilde",
        seed_tag=m2_curve.seed_tag,
        converged=m2_curve.converged & s2_curve.converged,
        branch_tags=m2_curve.branch_tags,
        coupling_j=m2_curve.coupling_j,
        extra={"m2": m2_curve.observable_values.copy(), "s2": s2_curve.observable_values.copy()},
    )


def thermal_references(
    params: ModelParams,
    beta_grid: Sequence[float],
    grid_policy: GridPolicy,
    method: str = "contour",
    settings: Optional[SolverSettings] = None,
) -> Dict[float, ThermalReference]:
    """
    S_beta and S_{2 beta} per beta, each on the grid the SRE solve at beta uses.

    S_{2 beta} comes from the doubled grid, so both share the SRE slice width.
    """
    references = {}
    for beta in beta_grid:
        beta = float(beta)
        references[beta] = thermal_reference(params.with_beta(beta), grid_policy(beta), method, settings)
        if not references[beta].converged:
            logger.warning("Thermal reference at beta=%.6g did not converge", beta)
    return references


def renyi2_curve(
    references: Dict[float, ThermalReference],
    beta_grid: Sequence[float],
    coupling_j: float = 1.0,
) -> BranchCurve:
    """S2 / N = S_{2 beta} / N - 2 S_beta / N, with S_beta / N as the action column."""
    missing = [b for b in beta_grid if float(b) not in references]
    if missing:
        raise GridMismatchError(f"no thermal reference at beta={missing}")
    picked = [references[float(b)] for b in beta_grid]
    return BranchCurve(
        beta_values=np.asarray(beta_grid, dtype=float),
        action_values=np.array([r.s_beta_per_n for r in picked]),
        observable_values=np.array([r.s2_per_n for r in picked]),
        observable="s2",
        seed_tag="dominant",
        converged=np.array([r.converged for r in picked], dtype=bool),
        coupling_j=coupling_j,
    )


@dataclass(frozen=True)
class DtauExtrapolation:
    """Linear-in-dtau continuum estimate."""

    value: float
    error: float
    slope: float
    monotone: bool
    dtaus: np.ndarray
    values: np.ndarray


def extrapolate_dtau(dtaus: Sequence[float], values: Sequence[float]) -> DtauExtrapolation:
    """
    Fit value = a + b dtau; error = |a - value at the finest grid|.

    Triples (or longer series) whose values do not move monotonically with
    dtau are flagged with monotone=False.
    """
    d = np.asarray(dtaus, dtype=float)
    v = np.asarray(values, dtype=float)
    if d.size < 2 or d.size != v.size:
        raise ParameterError("extrapolate_dtau needs at least two (dtau, value) pairs")
    order = np.argsort(d)
    d, v = d[order], v[order]
    slope, intercept = np.polyfit(d, v, 1)
    steps = np.diff(v)
    monotone = bool(np.all(steps >= 0) or np.all(steps <= 0))
    if not monotone:
        logger.warning("Non-monotone dtau series: %s", v)
    return DtauExtrapolation(
        value=float(intercept),
        error=float(abs(intercept - v[0])),
        slope=float(slope),
        monotone=monotone,
        dtaus=d,
        values=v,
    )


def kink_locations(curve: BranchCurve, factor: float = 5.0) -> List[float]:
    """
    Betas where the slope of the observable jumps.

    A kink is a local maximum of |slope change| that exceeds `factor` times the
    median slope change over converged points.
    """
    idx = np.flatnonzero(curve.converged & np.isfinite(curve.observable_values))
    if idx.size < 4:
        return []
    x = curve.beta_values[idx]
    y = curve.observable_values[idx]
    slopes = np.diff(y) / np.diff(x)
    jumps = np.abs(np.diff(slopes))
    floor = factor * max(float(np.median(jumps)), 1e-12)
    kinks = []
    for i, jump in enumerate(jumps):
        left = jumps[i - 1] if i > 0 else -np.inf
        right = jumps[i + 1] if i + 1 < jumps.size else -np.inf
        if jump > floor and jump >= left and jump >= right:
            kinks.append(float(x[i + 1]))
    return kinks


@dataclass(frozen=True)
class SingularityOrder:
    beta_hp_half: Optional[float]
    beta_sre: Optional[float]
    beta_hp: Optional[float]

    @property
    def ordered(self) -> bool:
        """beta*_HP / 2 < beta*_SRE < beta*_HP (equivalently beta*_HP < 2 beta*_SRE)."""
        if None in (self.beta_hp_half, self.beta_sre, self.beta_hp):
            return False
        return self.beta_hp_half < self.beta_sre < self.beta_hp


def check_singularity_order(hp: TransitionEstimate, sre: TransitionEstimate) -> SingularityOrder:
    """Order the three singular points of the M2_tilde curve."""
    half = hp.scaled(0.5, "HP-half")
    return SingularityOrder(half.beta_star, sre.beta_star, hp.beta_star)
