"""
Configuration parsing, run dispatch, CSV emission and run manifests.

Config files are plain key=value documents (one per line, # comments).
Every run writes its CSV files and a flat key=value manifest to the output
directory; CSV comment lines carry the sha256 of the config text so that a
table can always be traced back to the run that produced it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from coupled_syk_sre import __version__
from coupled_syk_sre.domain import (
    ConfigError,
    ModelParams,
    ParameterError,
    SreSuiteError,
    TauGrid,
    validate_params,
)
from coupled_syk_sre.exact_reference import disorder_average, ed_sre
from coupled_syk_sre.sre_solver import CONNECTED_SEED, DISCONNECTED_SEED, SreSaddleResult, iterate_sre
from coupled_syk_sre.sweep_driver import (
    BranchCurve,
    TransitionEstimate,
    assemble_sre_curve,
    check_singularity_order,
    extrapolate_dtau,
    fixed_slices,
    locate_transition,
    missing_partners,
    renyi2_curve,
    select_dominant,
    sweep,
    thermal_references,
)
from coupled_syk_sre.thermal_solver import (
    BLACK_HOLE_SEED,
    FREE_SEED,
    WORMHOLE_SEED,
    hp_scan,
    thermal_reference,
)
from utils.solver_config import SolverSettings

logger = logging.getLogger(__name__)

MODES = ("ed", "thermal", "sre", "sweep", "check")
THERMAL_METHODS = ("matsubara", "contour")
SRE_INITS = (DISCONNECTED_SEED, CONNECTED_SEED)
THERMAL_INITS = (FREE_SEED, WORMHOLE_SEED, BLACK_HOLE_SEED)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

CSV_COLUMNS = ("beta", "betaJ", "action_per_N", "m2_per_N", "s2_per_N", "m2tilde_per_N", "branch", "converged")

# config key -> RunConfig attribute, in output order
CONFIG_KEYS = {
    "mode": "mode",
    "N": "n_per_side",
    "J": "coupling_j",
    "mu": "hopping_mu",
    "beta": "beta",
    "M": "slices_m",
    "beta_grid": "beta_grid",
    "M_list": "m_list",
    "init": "init",
    "samples": "samples",
    "seed": "seed",
    "tol": "tol",
    "max_iter": "max_iter",
    "damping": "damping",
    "debug_sectors": "debug_sectors",
    "replicated": "replicated",
    "thermal_reference": "thermal_reference",
    "output_dir": "output_dir",
}

REQUIRED_KEYS = {
    "ed": ("N", "J", "mu", "beta", "samples", "seed"),
    "thermal": ("N", "J", "mu", "M"),
    "sre": ("N", "J", "mu", "M"),
    "sweep": ("N", "J", "mu", "beta_grid", "M"),
    "check": (),
}


# ============================================================================
# Run configuration
# ============================================================================

@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on; equal configs produce identical CSV files."""

    mode: str
    n_per_side: int = 1
    coupling_j: float = 1.0
    hopping_mu: float = 0.0
    beta: Optional[float] = None
    slices_m: Optional[int] = None
    beta_grid: Tuple[float, ...] = ()
    m_list: Tuple[int, ...] = ()
    init: Optional[str] = None
    samples: Optional[int] = None
    seed: int = 0
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    damping: Optional[float] = None
    debug_sectors: bool = False
    replicated: bool = False
    thermal_reference: str = "contour"
    output_dir: Optional[str] = None

    @property
    def params(self) -> ModelParams:
        if self.beta is None:
            raise ParameterError(f"mode {self.mode} has no single beta")
        return self.params_at(self.beta)

    def params_at(self, beta: float) -> ModelParams:
        return ModelParams(self.n_per_side, self.coupling_j, self.hopping_mu, beta)

    @property
    def grid(self) -> TauGrid:
        return TauGrid.for_beta(self.beta, self.slices_m)

    @property
    def slice_counts(self) -> Tuple[int, ...]:
        """M_list when given, otherwise (M,)."""
        if self.m_list:
            return self.m_list
        return (self.slices_m,) if self.slices_m is not None else ()

    def settings(self, base: SolverSettings) -> SolverSettings:
        """Solver settings with this config's tolerance overrides applied."""
        tol_key = "thermal_tol" if self.mode == "thermal" else "sre_tol"
        overrides: Dict[str, Any] = {"max_iter": self.max_iter, "damping": self.damping}
        overrides[tol_key] = self.tol
        return base.with_overrides(**overrides)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int(raw: str) -> int:
    value = float(raw)
    if not value.is_integer():
        raise ValueError(f"not an integer: {raw!r}")
    return int(value)


def _parse_list(raw: str, item) -> Tuple:
    return tuple(item(part) for part in raw.split(",") if part.strip())


_CONVERTERS = {
    "mode": str,
    "N": _parse_int,
    "J": float,
    "mu": float,
    "beta": float,
    "M": _parse_int,
    "beta_grid": lambda raw: _parse_list(raw, float),
    "M_list": lambda raw: _parse_list(raw, _parse_int),
    "init": str,
    "samples": _parse_int,
    "seed": _parse_int,
    "tol": float,
    "max_iter": _parse_int,
    "damping": float,
    "debug_sectors": _parse_bool,
    "replicated": _parse_bool,
    "thermal_reference": str,
    "output_dir": str,
}


def parse_config(text: str, mode: Optional[str] = None) -> RunConfig:
    """
    Parse and validate a key=value config document.

    Args:
        mode: mode given on the command line; must agree with a mode key

    Raises:
        ConfigError listing every problem found
    """
    problems: List[str] = []
    values: Dict[str, Any] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value, got {raw_line.strip()!r}")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = _CONVERTERS[key](raw)
        except ValueError as exc:
            problems.append(f"line {lineno}: bad value for {key}: {exc}")

    if mode is not None:
        if "mode" in values and values["mode"] != mode:
            problems.append(f"config mode {values['mode']!r} does not match command-line mode {mode!r}")
        values.setdefault("mode", mode)
    run_mode = values.get("mode")
    if run_mode is None:
        problems.append("missing required key 'mode'")
    elif run_mode not in MODES:
        problems.append(f"unknown mode {run_mode!r} (expected one of {', '.join(MODES)})")
    else:
        missing = [k for k in REQUIRED_KEYS[run_mode] if k not in values]
        if run_mode in ("thermal", "sre") and "beta" not in values and "beta_grid" not in values:
            missing.append("beta (or beta_grid)")
        for key in missing:
            problems.append(f"missing required key {key!r} for mode {run_mode}")

    if problems:
        raise ConfigError(problems)

    config = RunConfig(**{CONFIG_KEYS[k]: v for k, v in values.items()})
    problems.extend(_semantic_problems(config))
    if problems:
        raise ConfigError(problems)
    return config


def _semantic_problems(config: RunConfig) -> List[str]:
    problems = []
    counts = list(config.slice_counts) or [2]
    betas = ([config.beta] if config.beta is not None else []) + list(config.beta_grid)
    for beta in betas or [0.0]:
        for m in counts:
            try:
                validate_params(config.params_at(beta), TauGrid.for_beta(beta, m))
            except ParameterError as exc:
                problems.append(str(exc))
    if config.beta_grid and list(config.beta_grid) != sorted(config.beta_grid):
        problems.append("beta_grid must be sorted")
    if config.mode in ("sre", "sweep") and config.beta_grid:
        lacking = missing_partners(config.beta_grid)
        if lacking:
            problems.append(
                "beta_grid violates the grid policy (every beta <= max/2 needs 2*beta on the grid); "
                f"missing partners for {', '.join(f'{b:g}' for b in lacking)}"
            )
    if config.init is not None:
        allowed = THERMAL_INITS if config.mode == "thermal" else SRE_INITS
        if config.init not in allowed:
            problems.append(f"init {config.init!r} is not one of {', '.join(allowed)}")
    if config.thermal_reference not in THERMAL_METHODS:
        problems.append(f"thermal_reference must be one of {', '.join(THERMAL_METHODS)}")
    if config.mode == "ed" and config.samples is not None and config.samples < 2:
        problems.append("samples must be >= 2")
    if config.damping is not None and not 0 < config.damping <= 1:
        problems.append(f"damping must lie in (0, 1], got {config.damping}")
    if config.tol is not None and config.tol <= 0:
        problems.append(f"tol must be positive, got {config.tol}")
    return problems


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def format_config(config: RunConfig) -> str:
    """Serialize a config; parse_config(format_config(c)) == c."""
    defaults = RunConfig(mode=config.mode)
    required = REQUIRED_KEYS.get(config.mode, ())
    lines = []
    for key, attr in CONFIG_KEYS.items():
        value = getattr(config, attr)
        if value is None or (value == () and attr in ("beta_grid", "m_list")):
            continue
        if key != "mode" and key not in required and value == getattr(defaults, attr):
            continue
        lines.append(f"{key}={_format_value(value)}")
    return "\n".join(lines) + "\n"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ============================================================================
# Manifest
# ============================================================================

@dataclass
class RunManifest:
    """Flat key=value record of a run; written even when the run fails."""

    config_text: str
    mode: str
    version: str = __version__
    started: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))
    flags: Dict[str, Any] = field(default_factory=dict)
    points: List[Dict[str, Any]] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    status: str = "running"
    exit_code: Optional[int] = None
    error: Optional[str] = None
    wall_time: float = 0.0

    @property
    def config_sha256(self) -> str:
        return config_hash(self.config_text)

    def record_point(self, label: str, converged: bool, residual: float, wall_time: float, **extra: Any) -> None:
        self.points.append({"label": label, "converged": converged, "residual": residual,
                            "wall_time": wall_time, **extra})

    @property
    def all_converged(self) -> bool:
        return all(p["converged"] for p in self.points)

    def lines(self) -> List[str]:
        out = [
            f"version={self.version}",
            f"mode={self.mode}",
            f"started={self.started}",
            f"config_sha256={self.config_sha256}",
            f"status={self.status}",
            f"exit_code={'' if self.exit_code is None else self.exit_code}",
            f"wall_time={self.wall_time:.3f}",
        ]
        if self.error:
            out.append(f"error={self.error}")
        for key, value in sorted(self.flags.items()):
            out.append(f"flag.{key}={_format_value(value)}")
        for i, line in enumerate(l for l in self.config_text.splitlines() if l.strip()):
            out.append(f"config.{i}={line}")
        for i, point in enumerate(self.points):
            for key, value in point.items():
                out.append(f"point.{i}.{key}={_format_value(value)}")
        for i, name in enumerate(self.outputs):
            out.append(f"output.{i}={name}")
        return out

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.lines()) + "\n")
        return path


# ============================================================================
# CSV emission
# ============================================================================

def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else "%.17g" % float(value)
    return str(value)


_OBSERVABLE_COLUMN = {"m2": "m2_per_N", "s2": "s2_per_N", "m2_tilde": "m2tilde_per_N"}


def curve_rows(curve: BranchCurve) -> List[Dict[str, Any]]:
    """Rows of the standard CSV schema for a branch curve."""
    rows = []
    for i, beta in enumerate(curve.beta_values):
        row: Dict[str, Any] = {
            "beta": float(beta),
            "betaJ": float(beta * curve.coupling_j),
            "action_per_N": float(curve.action_values[i]),
            "branch": curve.branch_tags[i] if curve.branch_tags else curve.seed_tag,
            "converged": bool(curve.converged[i]),
        }
        if curve.observable in _OBSERVABLE_COLUMN:
            row[_OBSERVABLE_COLUMN[curve.observable]] = float(curve.observable_values[i])
        for key, column in _OBSERVABLE_COLUMN.items():
            if key in curve.extra and column not in row:
                row[column] = float(curve.extra[key][i])
        if curve.seed_tag != "dominant" and curve.branch_tags:
            row["branch"] = f"{curve.seed_tag}:{curve.branch_tags[i]}"
        rows.append(row)
    return rows


CsvSource = Union[BranchCurve, Sequence[BranchCurve], Sequence[Dict[str, Any]]]


def emit_csv(
    source: CsvSource,
    path: Union[str, Path],
    config_sha256: Optional[str] = None,
    columns: Sequence[str] = CSV_COLUMNS,
) -> Path:
    """
    Write curves (or prepared rows) with a fixed header and 17 significant digits.

    An empty source produces a header-only file. Missing cells are empty.
    """
    if isinstance(source, BranchCurve):
        rows = curve_rows(source)
    else:
        rows = []
        for item in source:
            rows.extend(curve_rows(item) if isinstance(item, BranchCurve) else [item])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        if config_sha256 is not None:
            handle.write(f"# config_sha256={config_sha256}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    return path


TRANSITION_COLUMNS = ("kind", "method", "beta_star", "betaJ_star", "bracket_low", "bracket_high", "low_confidence")


def transition_rows(estimates: Iterable[TransitionEstimate], coupling_j: float) -> List[Dict[str, Any]]:
    rows = []
    for est in estimates:
        lo, hi = est.bracket if est.bracket else (None, None)
        rows.append({
            "kind": est.kind,
            "method": est.method,
            "beta_star": est.beta_star,
            "betaJ_star": None if est.beta_star is None else est.beta_star * coupling_j,
            "bracket_low": lo,
            "bracket_high": hi,
            "low_confidence": est.low_confidence,
        })
    return rows


PROFILE_COLUMNS = ("branch", "topology", "beta", "tau", "tau_prime", "g11_LL", "converged")


def profile_rows(result: SreSaddleResult, branch: str) -> List[Dict[str, Any]]:
    """G^{11}_LL(tau, tau') of one SRE saddle, one row per slice pair."""
    m = result.grid.slices_m
    block = result.green.diagonal_block()[:m, :m]
    taus = result.grid.points()
    rows = []
    for i, tau in enumerate(taus):
        for j, tau_prime in enumerate(taus):
            rows.append({
                "branch": branch,
                "topology": result.branch_tag,
                "beta": result.params.beta,
                "tau": tau,
                "tau_prime": tau_prime,
                "g11_LL": block[i, j],
                "converged": result.converged,
            })
    return rows


# ============================================================================
# Dispatch
# ============================================================================

@dataclass
class RunOutcome:
    exit_code: int
    files: List[Path]
    manifest: RunManifest


class _Runner:
    """Executes one RunConfig, collecting outputs and manifest points."""

    def __init__(self, config: RunConfig, config_text: str, settings: SolverSettings, out_dir: Path):
        self.config = config
        self.settings = config.settings(settings)
        self.out_dir = out_dir
        self.manifest = RunManifest(config_text=config_text, mode=config.mode)
        self.manifest.flags.update({
            "threads": self.settings.threads,
            "thermal_tol": self.settings.thermal_tol,
            "sre_tol": self.settings.sre_tol,
            "max_iter": self.settings.max_iter,
            "damping": self.settings.damping,
            "debug_sectors": config.debug_sectors,
            "replicated": config.replicated,
            "thermal_reference": config.thermal_reference,
        })
        self.files: List[Path] = []

    @property
    def sha(self) -> str:
        return self.manifest.config_sha256

    def emit(self, name: str, source: CsvSource, columns: Sequence[str] = CSV_COLUMNS) -> None:
        path = emit_csv(source, self.out_dir / name, self.sha, columns)
        self.files.append(path)
        self.manifest.outputs.append(name)

    def record_curve(self, label: str, curve: BranchCurve, wall_time: float) -> None:
        residuals = curve.residuals if curve.residuals is not None else np.zeros(len(curve))
        for beta, ok, res in zip(curve.beta_values, curve.converged, residuals):
            self.manifest.record_point(f"{label}@{beta:g}", bool(ok), float(res), wall_time / max(len(curve), 1))

    # -- modes ---------------------------------------------------------------

    def run_ed(self) -> None:
        c = self.config
        params = c.params
        cache: Dict[int, Any] = {}

        def estimator(seed: int) -> float:
            values = ed_sre(params, seed, replicated=c.replicated)
            cache[seed] = values
            return values.m2 / params.n_qubits

        start = time.perf_counter()
        average = disorder_average(estimator, c.samples, c.seed, max_workers=self.settings.threads)
        wall = time.perf_counter() - start
        rows = []
        for seed in average.seeds:
            per_n = cache[seed].per_qubit(params.n_qubits)
            rows.append(self._ed_row(params, per_n.m2, per_n.s2, per_n.m2_tilde, f"sample-{seed}"))
            self.manifest.record_point(f"ed@seed{seed}", True, 0.0, wall / len(average.seeds))
        per_n = [cache[s].per_qubit(params.n_qubits) for s in average.seeds]
        means = [float(np.mean([getattr(v, k) for v in per_n])) for k in ("m2", "s2", "m2_tilde")]
        errs = [float(np.std([getattr(v, k) for v in per_n], ddof=1) / math.sqrt(len(per_n)))
                for k in ("m2", "s2", "m2_tilde")]
        rows.append(self._ed_row(params, *means, "mean"))
        rows.append(self._ed_row(params, *errs, "stderr"))
        self.emit("ed.csv", rows)

    @staticmethod
    def _ed_row(params: ModelParams, m2: float, s2: float, m2_tilde: float, label: str) -> Dict[str, Any]:
        return {
            "beta": params.beta,
            "betaJ": params.beta * params.energy_unit,
            "m2_per_N": m2,
            "s2_per_N": s2,
            "m2tilde_per_N": m2_tilde,
            "branch": label,
            "converged": True,
        }

    def run_thermal(self) -> None:
        c = self.config
        policy = fixed_slices(c.slices_m)
        if c.beta_grid:
            start = time.perf_counter()
            scan = hp_scan(c.params_at(c.beta_grid[0]), c.beta_grid, policy, self.settings)
            references = thermal_references(c.params_at(c.beta_grid[0]), c.beta_grid, policy,
                                            c.thermal_reference, self.settings)
            s2 = renyi2_curve(references, c.beta_grid, c.params_at(c.beta_grid[0]).energy_unit)
            wall = time.perf_counter() - start
            self.record_curve("thermal-black-hole", scan.black_hole, wall / 3)
            self.record_curve("thermal-wormhole", scan.wormhole, wall / 3)
            self.record_curve("thermal-s2", s2, wall / 3)
            self.emit("fig4a.csv", [scan.black_hole, scan.wormhole, s2])
            self.emit("transitions.csv", transition_rows([scan.transition], c.coupling_j), TRANSITION_COLUMNS)
            return
        start = time.perf_counter()
        reference = thermal_reference(c.params, c.grid, c.thermal_reference, self.settings)
        wall = time.perf_counter() - start
        self.manifest.record_point(f"thermal@{c.beta:g}", reference.converged, 0.0, wall)
        self.emit("thermal.csv", [{
            "beta": c.beta,
            "betaJ": c.beta * c.params.energy_unit,
            "action_per_N": reference.s_beta_per_n,
            "s2_per_N": reference.s2_per_n,
            "branch": "dominant",
            "converged": reference.converged,
        }])

    def run_sre(self) -> None:
        c = self.config
        if c.beta_grid:
            self._sre_pipeline(c.beta_grid, write_figures=False)
            return
        start = time.perf_counter()
        result = iterate_sre(
            c.params, c.grid, c.init or DISCONNECTED_SEED,
            thermal_method=c.thermal_reference, settings=self.settings, debug_sectors=c.debug_sectors,
        )
        wall = time.perf_counter() - start
        self.manifest.record_point(f"sre@{c.beta:g}", result.converged, result.residual, wall,
                                   iterations=result.iterations, bistable=result.bistable)
        self.emit("sre.csv", [{
            "beta": c.beta,
            "betaJ": c.beta * c.params.energy_unit,
            "action_per_N": result.s_sre_per_n,
            "m2_per_N": result.m2_per_n,
            "s2_per_N": result.s2_per_n,
            "m2tilde_per_N": result.m2_tilde_per_n,
            "branch": result.branch_tag,
            "converged": result.converged,
        }])

    def run_sweep(self) -> None:
        self._sre_pipeline(self.config.beta_grid, write_figures=True)

    def _sre_pipeline(self, beta_grid: Sequence[float], write_figures: bool) -> None:
        c = self.config
        betas = [float(b) for b in beta_grid]
        sre_estimates: List[Tuple[int, TransitionEstimate]] = []
        last: Dict[str, Any] = {}
        for m in c.slice_counts:
            policy = fixed_slices(m)
            start = time.perf_counter()
            thermal_curves = sweep(c.params_at(betas[0]), betas, "thermal", grid_policy=policy, settings=self.settings)
            references = thermal_references(c.params_at(betas[0]), betas, policy, c.thermal_reference, self.settings)
            s2 = renyi2_curve(references, betas, c.params_at(betas[0]).energy_unit)
            wall_thermal = time.perf_counter() - start
            start = time.perf_counter()
            sre_curves = sweep(
                c.params_at(betas[0]), betas, "sre", grid_policy=policy, settings=self.settings,
                references=references, thermal_method=c.thermal_reference, debug_sectors=c.debug_sectors,
            )
            wall_sre = time.perf_counter() - start
            for curve in thermal_curves:
                self.record_curve(f"M{m}:thermal-{curve.seed_tag}", curve, wall_thermal / (len(thermal_curves) + 1))
            self.record_curve(f"M{m}:thermal-s2", s2, wall_thermal / (len(thermal_curves) + 1))
            for curve in sre_curves:
                self.record_curve(f"M{m}:sre-{curve.seed_tag}", curve, wall_sre / len(sre_curves))
            sre_dominant = select_dominant(sre_curves)
            sre_estimates.append((m, locate_transition(sre_curves[0], sre_curves[1], kind="SRE")))
            last = {
                "slices_m": m,
                "thermal_curves": thermal_curves,
                "references": references,
                "s2": s2,
                "sre_curves": sre_curves,
                "sre_dominant": sre_dominant,
                "hp": locate_transition(thermal_curves[0], thermal_curves[1], kind="HP"),
            }

        m2_tilde = assemble_sre_curve(last["sre_dominant"], last["s2"])
        hp = last["hp"]
        sre_transition = sre_estimates[-1][1]
        estimates = [sre_transition, hp, hp.scaled(0.5, "HP-half")]
        found = [(m, e) for m, e in sre_estimates if e.is_transition]
        if len(found) >= 2:
            fit = extrapolate_dtau([1.0 / m for m, _ in found], [e.beta_star for _, e in found])
            estimates.append(TransitionEstimate("SRE", "dtau-extrapolated", fit.value,
                                                (fit.value - fit.error, fit.value + fit.error),
                                                low_confidence=not fit.monotone))
        order = check_singularity_order(hp, sre_transition)
        self.manifest.flags["singularity_order_ok"] = order.ordered

        prefix = "" if write_figures else "sre_"
        self.emit(f"{prefix}fig3a.csv", list(last["sre_curves"]) + [last["sre_dominant"]])
        self.emit(f"{prefix}fig3b.csv", self._profiles(betas, last), PROFILE_COLUMNS)
        self.emit(f"{prefix}fig4a.csv", list(last["thermal_curves"]) + [last["s2"]])
        self.emit(f"{prefix}fig4b.csv", m2_tilde)
        self.emit(f"{prefix}transitions.csv", transition_rows(estimates, c.coupling_j), TRANSITION_COLUMNS)

    def _profiles(self, betas: Sequence[float], last: Dict[str, Any]) -> List[Dict[str, Any]]:
        """Both SRE branches at the configured beta (the largest grid beta if none is set)."""
        c = self.config
        beta = float(c.beta) if c.beta is not None else betas[-1]
        params = c.params_at(beta)
        grid = fixed_slices(last["slices_m"])(beta)
        reference = last["references"].get(beta)
        if reference is None:
            reference = thermal_reference(params, grid, c.thermal_reference, self.settings)
        rows: List[Dict[str, Any]] = []
        for seed in (DISCONNECTED_SEED, CONNECTED_SEED):
            start = time.perf_counter()
            result = iterate_sre(params, grid, seed, reference=reference, thermal_method=c.thermal_reference,
                                 settings=self.settings, debug_sectors=c.debug_sectors)
            self.manifest.record_point(f"profile-{seed}@{beta:g}", result.converged, result.residual,
                                       time.perf_counter() - start)
            rows.extend(profile_rows(result, seed))
        return rows

    def run_check(self) -> None:
        from experiments.acceptance_checks import run_quick_checks

        start = time.perf_counter()
        checks = run_quick_checks(self.settings)
        wall = time.perf_counter() - start
        for check in checks:
            self.manifest.record_point(f"check:{check.name}", check.passed, check.error, wall / len(checks))
        self.emit("checks.csv", [check.to_row() for check in checks], ("name", "passed", "value", "expected", "error", "detail"))

    def execute(self) -> int:
        handlers = {
            "ed": self.run_ed,
            "thermal": self.run_thermal,
            "sre": self.run_sre,
            "sweep": self.run_sweep,
            "check": self.run_check,
        }
        start = time.perf_counter()
        code = EXIT_PARTIAL
        try:
            handlers[self.config.mode]()
            code = EXIT_OK if self.manifest.all_converged else EXIT_PARTIAL
            self.manifest.status = "completed" if code == EXIT_OK else "partial"
        except SreSuiteError as exc:
            logger.error(f"Run failed: {exc}")
            self.manifest.status = "failed"
            self.manifest.error = str(exc).replace("\n", " ")
        except Exception as exc:
            logger.exception(f"Run failed with {type(exc).__name__}")
            self.manifest.status = "failed"
            self.manifest.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        finally:
            self.manifest.wall_time = time.perf_counter() - start
            self.manifest.exit_code = code
            self.manifest.write(self.out_dir / "manifest.txt")
        return code


def run(
    config: RunConfig,
    settings: Optional[SolverSettings] = None,
    config_text: Optional[str] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> RunOutcome:
    """
    Execute a parsed config: write CSV files and manifest.txt.

    Returns:
        RunOutcome whose exit_code is 0 when every point converged and 1 otherwise
    """
    settings = settings if settings is not None else SolverSettings.from_env()
    text = config_text if config_text is not None else format_config(config)
    directory = Path(out_dir or config.output_dir or settings.output_dir)
    runner = _Runner(config, text, settings, directory)
    logger.info(f"Running mode={config.mode} into {directory}")
    code = runner.execute()
    return RunOutcome(exit_code=code, files=runner.files, manifest=runner.manifest)


# ============================================================================
# Command line
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coupled-syk-sre",
        description="Stabilizer Rényi entropy of the coupled SYK model: exact and large-N solvers",
    )
    parser.add_argument("mode", choices=MODES, help="What to run")
    parser.add_argument("--config", required=True, type=str, help="Path to a key=value config file")
    parser.add_argument("--out", type=str, default=None, help="Output directory (overrides output_dir)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (overrides SYK_SRE_THREADS)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    settings = SolverSettings.from_env().with_overrides(threads=args.threads)
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    problems = settings.validate()
    if problems:
        for problem in problems:
            print(f"ERROR: {problem}")
        return EXIT_CONFIG

    config_path = Path(args.config)
    if not config_path.exists():
        print(f"ERROR: Config file not found: {config_path}")
        return EXIT_CONFIG
    text = config_path.read_text()
    try:
        config = parse_config(text, mode=args.mode)
    except ConfigError as exc:
        print("ERROR: invalid configuration")
        for problem in exc.problems:
            print(f"  - {problem}")
        return EXIT_CONFIG

    outcome = run(config, settings, config_text=text, out_dir=args.out)
    print("\n" + "=" * 70)
    print(f"RUN {outcome.manifest.status.upper()}")
    print("=" * 70)
    for path in outcome.files:
        print(f"  {path}")
    print(f"  {Path(args.out or config.output_dir or settings.output_dir) / 'manifest.txt'}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
