"""
Acceptance checks for the coupled-SYK SRE suite.

The quick checks back the `check` CLI mode; the full scans are run
directly with `python -m experiments.acceptance_checks`.
"""

from .acceptance_checks import AcceptanceChecks, AcceptanceConfig, CheckResult, run_quick_checks

__all__ = [
    "AcceptanceChecks",
    "AcceptanceConfig",
    "CheckResult",
    "run_quick_checks",
]
