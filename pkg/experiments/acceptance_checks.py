"""
Acceptance checks for the coupled-SYK SRE suite.

Quick checks take seconds and back the `check` CLI mode. The full scans
(zero-temperature entropy, transition locations, plateau, replica symmetry)
take minutes to hours and are run explicitly; results are saved as JSON.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence

from coupled_syk_sre.domain import ModelParams, OracleMismatchError, TauGrid
from coupled_syk_sre.exact_reference import ed_sre, free_pair_m2
from coupled_syk_sre.sre_solver import CONNECTED_SEED, full_replica_check, iterate_sre, pairing_gap
from coupled_syk_sre.sweep_driver import (
    assemble_sre_curve,
    check_singularity_order,
    extrapolate_dtau,
    fixed_slices,
    locate_transition,
    renyi2_curve,
    select_dominant,
    sweep,
    thermal_references,
)
from coupled_syk_sre.thermal_solver import extract_s0
from utils.solver_config import SolverSettings, get_settings

S0_SYK = 0.2324


@dataclass
class CheckResult:
    """Outcome of one acceptance check."""

    name: str
    passed: bool
    value: float
    expected: float
    error: float
    """|value - expected| (or the quantity compared against a threshold)"""

    detail: str = ""
    wall_time: float = 0.0
    timestamp: datetime = field(default_factory=datetime.now)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        return {
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "expected": self.expected,
            "error": self.error,
            "detail": self.detail,
            "wall_time": self.wall_time,
            "timestamp": self.timestamp.isoformat(),
        }

    def to_row(self) -> Dict[str, Any]:
        """Row for the checks CSV."""
        return {k: self.to_dict()[k] for k in ("name", "passed", "value", "expected", "error", "detail")}


@dataclass
class AcceptanceConfig:
    """Grid sizes and scan ranges for the full acceptance scans."""

    output_dir: str = "results/acceptance"
    slices_list: Sequence[int] = (256, 512)
    flatness_slices: int = 512
    symmetry_slices: int = 128
    s0_slices: int = 2 ** 14
    s0_beta_j: Sequence[float] = (50.0, 100.0, 200.0, 400.0)
    transition_beta_j: Sequence[float] = tuple(float(b) for b in range(10, 36))
    plateau_beta_j: float = 60.0


class AcceptanceChecks:
    """
    Runs the acceptance criteria and collects CheckResults.

    Each check_* method appends one result; failures inside a check are
    recorded as failed results rather than propagated.
    """

    def __init__(self, config: Optional[AcceptanceConfig] = None, settings: Optional[SolverSettings] = None):
        self.config = config or AcceptanceConfig()
        self.settings = settings or get_settings()
        self.results: List[CheckResult] = []
        self.logger = logging.getLogger(__name__)

    def _record(self, name: str, body: Callable[[], CheckResult]) -> CheckResult:
        start = time.perf_counter()
        try:
            result = body()
        except Exception as exc:
            self.logger.error(f"Check {name} raised: {exc}")
            result = CheckResult(name, False, math.nan, math.nan, math.inf, detail=f"{type(exc).__name__}: {exc}")
        result.wall_time = time.perf_counter() - start
        status = "passed" if result.passed else "FAILED"
        self.logger.info(f"{name}: {status} (value={result.value:.6g}, expected={result.expected:.6g})")
        self.results.append(result)
        return result

    # ------------------------------------------------------------------
    # Quick checks
    # ------------------------------------------------------------------

    def check_ed_equivalence(self, n_per_side: int = 3, samples: int = 5, beta_j_values=(1.0, 5.0)) -> CheckResult:
        def body() -> CheckResult:
            worst = 0.0
            for beta_j in beta_j_values:
                params = ModelParams(n_per_side, 1.0, 0.1, beta_j)
                for seed in range(samples):
                    direct = ed_sre(params, seed, replicated=False)
                    try:
                        replicated = ed_sre(params, seed, replicated=True)
                    except OracleMismatchError as exc:
                        return CheckResult("ed_equivalence", False, math.nan, 0.0, math.inf, detail=str(exc))
                    worst = max(worst, abs(direct.m2 - replicated.m2))
            return CheckResult("ed_equivalence", worst < 1e-9, worst, 0.0, worst,
                               detail=f"N={n_per_side}, {samples} samples")
        return self._record("ed_equivalence", body)

    def check_free_closed_form(self, n_per_side: int = 4, beta_mu: float = 2.0) -> CheckResult:
        def body() -> CheckResult:
            params = ModelParams(n_per_side, 0.0, beta_mu, 1.0)
            value = ed_sre(params, seed=0).m2 / n_per_side
            expected = free_pair_m2(beta_mu)
            error = abs(value - expected)
            return CheckResult("free_closed_form_ed", error < 1e-8, value, expected, error)
        return self._record("free_closed_form_ed", body)

    def check_infinite_temperature(self, n_per_side: int = 2) -> CheckResult:
        def body() -> CheckResult:
            values = ed_sre(ModelParams(n_per_side, 1.0, 0.3, 0.0), seed=0)
            ln2 = n_per_side * math.log(2)
            error = max(abs(values.m2 - ln2), abs(values.s2 - ln2), abs(values.m2_tilde))
            return CheckResult("infinite_temperature_ed", error < 1e-12, values.m2, ln2, error)
        return self._record("infinite_temperature_ed", body)

    def check_sre_anchor(self, slices_m: int = 16, beta: float = 1.0) -> CheckResult:
        def body() -> CheckResult:
            params = ModelParams(1, 0.0, 0.0, beta)
            result = iterate_sre(params, TauGrid.for_beta(beta, slices_m), settings=self.settings)
            expected = -4 * math.log(2)
            error = abs(result.s_sre_per_n - expected)
            return CheckResult("sre_anchor", error < 1e-12, result.s_sre_per_n, expected, error,
                               detail=f"M={slices_m}")
        return self._record("sre_anchor", body)

    def check_free_closed_form_large_n(self, slices_m: int = 32, beta_mu: float = 2.0) -> CheckResult:
        def body() -> CheckResult:
            params = ModelParams(1, 0.0, beta_mu, 1.0)
            result = iterate_sre(params, TauGrid.for_beta(1.0, slices_m), settings=self.settings)
            expected = free_pair_m2(beta_mu)
            error = abs(result.m2_per_n - expected)
            return CheckResult("free_closed_form_large_n", error < 1e-8, result.m2_per_n, expected, error,
                               detail=f"M={slices_m}")
        return self._record("free_closed_form_large_n", body)

    def check_sector_pairing(self, slices_m: int = 32, beta_j: float = 2.0, mu: float = 0.1) -> CheckResult:
        def body() -> CheckResult:
            params = ModelParams(1, 1.0, mu, beta_j)
            result = iterate_sre(params, TauGrid.for_beta(beta_j, slices_m), settings=self.settings,
                                 debug_sectors=True)
            gap = pairing_gap(result.sector_greens)
            return CheckResult("sector_pairing", gap <= 1e-8, gap, 0.0, gap,
                               detail=f"{result.iterations} iterations")
        return self._record("sector_pairing", body)

    def run_quick_checks(self) -> List[CheckResult]:
        """Seconds-scale checks: ED oracles, anchors and sector pairing."""
        self.logger.info("🚀 Running quick acceptance checks")
        self.check_ed_equivalence()
        self.check_free_closed_form()
        self.check_infinite_temperature()
        self.check_sre_anchor()
        self.check_free_closed_form_large_n()
        self.check_sector_pairing()
        return list(self.results)

    # ------------------------------------------------------------------
    # Full scans
    # ------------------------------------------------------------------

    def check_flatness(self, beta_j_values=(1.0, 5.0, 10.0, 20.0)) -> CheckResult:
        def body() -> CheckResult:
            m = self.config.flatness_slices
            worst = 0.0
            for beta_j in beta_j_values:
                params = ModelParams(1, 1.0, 0.0, beta_j)
                result = iterate_sre(params, TauGrid.for_beta(beta_j, m), settings=self.settings)
                worst = max(worst, abs(result.m2_per_n - math.log(2)))
            return CheckResult("mu0_flatness", worst < 1e-6, worst, 0.0, worst, detail=f"M={m}")
        return self._record("mu0_flatness", body)

    def check_zero_temperature_entropy(self) -> CheckResult:
        def body() -> CheckResult:
            fit = extract_s0(self.config.s0_beta_j, self.config.s0_slices, settings=self.settings)
            error = abs(fit.s0 - S0_SYK)
            return CheckResult("zero_temperature_entropy", error <= 3e-3 and fit.converged, fit.s0, S0_SYK, error)
        return self._record("zero_temperature_entropy", body)

    def _scan(self, mu_over_j: float, slices_m: int) -> Dict[str, Any]:
        betas = list(self.config.transition_beta_j)
        policy = fixed_slices(slices_m)
        params = ModelParams(1, 1.0, mu_over_j, betas[0])
        thermal = sweep(params, betas, "thermal", grid_policy=policy, settings=self.settings)
        references = thermal_references(params, betas, policy, settings=self.settings)
        sre = sweep(params, betas, "sre", grid_policy=policy, settings=self.settings, references=references)
        return {
            "hp": locate_transition(thermal[0], thermal[1], kind="HP"),
            "sre": locate_transition(sre[0], sre[1], kind="SRE"),
            "m2_tilde": assemble_sre_curve(select_dominant(sre), renyi2_curve(references, betas)),
        }

    def check_transitions(self, mu_over_j: float = 0.1) -> List[CheckResult]:
        scans: Dict[int, Dict[str, Any]] = {}

        def sre_body() -> CheckResult:
            for m in self.config.slices_list:
                scans[m] = self._scan(mu_over_j, m)
            found = [(m, s["sre"].beta_star) for m, s in scans.items() if s["sre"].is_transition]
            if len(found) >= 2:
                fit = extrapolate_dtau([1.0 / m for m, _ in found], [b for _, b in found])
                value = fit.value
            elif found:
                value = found[-1][1]
            else:
                return CheckResult("sre_transition", False, math.nan, 19.0, math.inf, detail="no coexistence")
            return CheckResult("sre_transition", abs(value - 19.0) <= 2.0, value, 19.0, abs(value - 19.0))

        def hp_body() -> CheckResult:
            finest = scans[max(scans)] if scans else self._scan(mu_over_j, max(self.config.slices_list))
            hp = finest["hp"]
            if not hp.is_transition:
                return CheckResult("hp_transition", False, math.nan, 27.0, math.inf, detail="crossover")
            return CheckResult("hp_transition", abs(hp.beta_star - 27.0) <= 2.0, hp.beta_star, 27.0,
                               abs(hp.beta_star - 27.0))

        def order_body() -> CheckResult:
            finest = scans[max(scans)]
            order = check_singularity_order(finest["hp"], finest["sre"])
            value = math.nan if order.beta_sre is None else order.beta_sre
            return CheckResult("singularity_order", order.ordered, value, math.nan, 0.0,
                               detail=f"HP/2={order.beta_hp_half}, SRE={order.beta_sre}, HP={order.beta_hp}")

        return [self._record("sre_transition", sre_body), self._record("hp_transition", hp_body),
                self._record("singularity_order", order_body)]

    def check_hp_crossover(self, mu_over_j: float = 0.2) -> CheckResult:
        def body() -> CheckResult:
            hp = self._scan(mu_over_j, min(self.config.slices_list))["hp"]
            return CheckResult("hp_crossover", not hp.is_transition, hp.beta_star or math.nan, math.nan, 0.0,
                               detail=hp.describe())
        return self._record("hp_crossover", body)

    def check_plateau(self, mu_over_j: float = 0.05) -> CheckResult:
        def body() -> CheckResult:
            beta_j = self.config.plateau_beta_j
            m = max(self.config.slices_list)
            result = iterate_sre(ModelParams(1, 1.0, mu_over_j, beta_j), TauGrid.for_beta(beta_j, m),
                                 init=CONNECTED_SEED, settings=self.settings)
            expected = 2 * math.log(2) - 4 * S0_SYK
            error = abs(result.m2_per_n - expected)
            return CheckResult("low_temperature_plateau", error <= 0.15 * expected, result.m2_per_n, expected, error)
        return self._record("low_temperature_plateau", body)

    def check_replica_symmetry(self) -> CheckResult:
        def body() -> CheckResult:
            worst = 0.0
            for mu, beta_j in ((0.0, 5.0), (0.1, 10.0)):
                points = full_replica_check(ModelParams(1, 1.0, mu, beta_j), self.config.symmetry_slices, [beta_j],
                                            settings=self.settings)
                worst = max(worst, max(p.off_diagonal_norm for p in points))
            return CheckResult("replica_symmetry", worst < 1e-6, worst, 0.0, worst)
        return self._record("replica_symmetry", body)

    def run_full(self) -> Dict[str, Any]:
        """Run every check and save the results as JSON."""
        self.logger.info("🚀 Running full acceptance scans")
        self.run_quick_checks()
        self.check_flatness()
        self.check_zero_temperature_entropy()
        self.check_transitions()
        self.check_hp_crossover()
        self.check_plateau()
        self.check_replica_symmetry()

        os.makedirs(self.config.output_dir, exist_ok=True)
        results_file = os.path.join(self.config.output_dir, "acceptance_results.json")
        summary = self.get_summary()
        with open(results_file, "w") as f:
            json.dump({
                "acceptance_metadata": {
                    "timestamp": datetime.now().isoformat(),
                    "config": {k: list(v) if isinstance(v, tuple) else v for k, v in self.config.__dict__.items()},
                    "settings": self.settings.to_dict(),
                    **summary["summary"],
                },
                "results": [r.to_dict() for r in self.results],
            }, f, indent=2)
        self.logger.info(f"✅ Acceptance scans completed, results saved to: {results_file}")
        return {**summary, "results_file": results_file}

    def get_summary(self) -> Dict[str, Any]:
        """Counts and the list of failed checks."""
        if not self.results:
            return {"message": "No results available. Run the checks first."}
        total = len(self.results)
        passed = sum(1 for r in self.results if r.passed)
        return {
            "summary": {
                "total_checks": total,
                "passed_checks": passed,
                "pass_rate": passed / total,
                "wall_time": sum(r.wall_time for r in self.results),
            },
            "failed": [r.name for r in self.results if not r.passed],
        }

    def print_table(self) -> None:
        print("\n" + "=" * 70)
        print("ACCEPTANCE CHECKS")
        print("=" * 70)
        for r in self.results:
            mark = "✅" if r.passed else "❌"
            print(f"{mark} {r.name:<28} value={r.value:<14.8g} expected={r.expected:<12.6g} {r.detail}")
        print("=" * 70)


def run_quick_checks(settings: Optional[SolverSettings] = None) -> List[CheckResult]:
    """Quick checks with a printed summary table."""
    checks = AcceptanceChecks(settings=settings)
    results = checks.run_quick_checks()
    checks.print_table()
    return results


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    runner = AcceptanceChecks()
    summary = runner.run_full()
    runner.print_table()
    print(json.dumps(summary, indent=2))
