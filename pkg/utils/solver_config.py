"""
Runtime settings for the coupled-SYK SRE suite.

Settings are loaded from the environment, with a project-level .env file
read through python-dotenv when it is available. Command-line flags take
precedence over anything set here.
"""

import logging
import os
from dataclasses import dataclass, asdict, replace
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

# Load environment variables
try:
    from dotenv import load_dotenv
    load_dotenv()
    HAS_DOTENV = True
except ImportError:
    HAS_DOTENV = False
    logger.warning("python-dotenv not installed. Using system environment variables only.")


# =============================================================================
# Configuration
# =============================================================================

@dataclass(frozen=True)
class SolverSettings:
    """Process-wide defaults for solvers and the command line."""

    threads: int = 1
    """Worker threads for sector solves and disorder samples"""

    log_level: str = "INFO"
    """Level passed to logging.basicConfig by the CLI"""

    output_dir: str = "results"
    """Default directory for CSV files and manifests"""

    thermal_tol: float = 1e-10
    """max|dG| stopping tolerance of the thermal iteration"""

    sre_tol: float = 1e-7
    """max|dG| stopping tolerance of the SRE iteration"""

    max_iter: int = 3000
    """Iteration cap for both solvers"""

    damping: float = 0.3
    """Initial mixing fraction of the damped fixed-point loop"""

    @classmethod
    def from_env(cls) -> "SolverSettings":
        """Load settings from SYK_SRE_* environment variables."""
        defaults = cls()
        return cls(
            threads=_env_int("SYK_SRE_THREADS", defaults.threads),
            log_level=os.getenv("SYK_SRE_LOG_LEVEL", defaults.log_level).upper(),
            output_dir=os.getenv("SYK_SRE_OUTPUT_DIR", defaults.output_dir),
            thermal_tol=_env_float("SYK_SRE_THERMAL_TOL", defaults.thermal_tol),
            sre_tol=_env_float("SYK_SRE_SRE_TOL", defaults.sre_tol),
            max_iter=_env_int("SYK_SRE_MAX_ITER", defaults.max_iter),
            damping=_env_float("SYK_SRE_DAMPING", defaults.damping),
        )

    def with_overrides(self, **overrides: Any) -> "SolverSettings":
        """Copy with the non-None overrides applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def validate(self) -> List[str]:
        """Return a list of problems (empty when the settings are usable)."""
        problems = []
        if self.threads < 1:
            problems.append(f"threads must be >= 1, got {self.threads}")
        if self.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append(f"unknown log level {self.log_level!r}")
        if not 0.0 < self.damping <= 1.0:
            problems.append(f"damping must lie in (0, 1], got {self.damping}")
        if self.thermal_tol <= 0 or self.sre_tol <= 0:
            problems.append("tolerances must be positive")
        if self.max_iter < 1:
            problems.append(f"max_iter must be >= 1, got {self.max_iter}")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning("Ignoring %s=%r (not an integer)", name, raw)
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning("Ignoring %s=%r (not a number)", name, raw)
        return default


_settings: Optional[SolverSettings] = None


def get_settings() -> SolverSettings:
    """Cached settings loaded from the environment on first use."""
    global _settings
    if _settings is None:
        _settings = SolverSettings.from_env()
    return _settings
