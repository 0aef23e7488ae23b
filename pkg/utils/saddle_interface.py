"""
Common interface for damped fixed-point saddle solvers.

The thermal and the replicated (SRE) Schwinger-Dyson solvers share the same
outer loop: propose a new Green's function from the current one, mix a
fraction of the proposal in, and stop once the proposal stops moving.
"""

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


class SolverDivergedError(ArithmeticError):
    """NaN or inf produced by a fixed-point update."""

    def __init__(self, message: str, dump: Dict[str, Any]):
        self.dump = dump
        super().__init__(message)


@dataclass
class IterationRecord:
    """Outcome of one damped fixed-point run."""

    state: np.ndarray
    """Last accepted iterate (the converged Green's function on success)"""

    converged: bool
    """Whether max|F(G) - G| dropped below the tolerance"""

    iterations: int
    """Number of proposals evaluated"""

    residual: float
    """Final max|F(G) - G|"""

    damping: float
    """Mixing fraction in use when the loop stopped"""

    residual_history: List[float] = field(default_factory=list)
    """max|F(G) - G| at every iteration"""

    def tail_is_monotone(self, window: int = 50, slack: float = 1e-12) -> bool:
        """True if the residual never grows over the last `window` iterations."""
        tail = np.asarray(self.residual_history[-window:])
        if tail.size < 2:
            return True
        return bool(np.all(np.diff(tail) <= slack * np.maximum(tail[:-1], 1.0)))

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization (without the state)."""
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "damping": self.damping,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class DampedFixedPointSolver(ABC):
    """
    Abstract base class for saddle solvers iterated as G <- G + x (F(G) - G).

    Subclasses implement propose(); they may override on_iteration() to run
    per-iteration checks. The mixing fraction x is halved whenever the
    residual grows twice in a row.
    """

    def __init__(self, tol: float, max_iter: int, damping: float, min_damping: float = 1e-3):
        """
        Initialize the loop controls.

        Args:
            tol: stopping tolerance on max|F(G) - G|
            max_iter: maximum number of proposals
            damping: initial mixing fraction x
            min_damping: floor for the halving rule
        """
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.min_damping = min_damping

    @property
    @abstractmethod
    def path_integral(self) -> str:
        """Name of the path integral this solver evaluates."""
        pass

    @abstractmethod
    def propose(self, state: np.ndarray, iteration: int) -> np.ndarray:
        """Return F(state), the Green's function implied by state."""
        pass

    def on_iteration(self, iteration: int, state: np.ndarray, residual: float) -> None:
        """Hook called after every proposal."""
        pass

    def iterate(self, initial: np.ndarray) -> IterationRecord:
        """Run the damped loop from `initial`."""
        state = np.array(initial, dtype=float, copy=True)
        damping = self.damping
        history: List[float] = []
        growth_streak = 0
        residual = np.inf

        for iteration in range(1, self.max_iter + 1):
            proposal = self.propose(state, iteration)
            if not np.all(np.isfinite(proposal)):
                raise SolverDivergedError(
                    f"{self.path_integral}: non-finite update at iteration {iteration}",
                    dump={
                        "iteration": iteration,
                        "damping": damping,
                        "residual_history": history[-20:],
                        "last_state_max": float(np.max(np.abs(state))),
                    },
                )
            step = proposal - state
            residual = float(np.max(np.abs(step)))
            history.append(residual)
            self.on_iteration(iteration, proposal, residual)
            logger.debug("%s iter %d residual %.3e x=%.4f", self.path_integral, iteration, residual, damping)

            if residual < self.tol:
                return IterationRecord(proposal, True, iteration, residual, damping, history)

            if len(history) > 1 and residual > history[-2]:
                growth_streak += 1
                if growth_streak >= 2:
                    damping = max(damping / 2.0, self.min_damping)
                    growth_streak = 0
            else:
                growth_streak = 0
            state = state + damping * step

        logger.warning(
            "%s did not converge in %d iterations (residual %.3e)",
            self.path_integral, self.max_iter, residual,
        )
        return IterationRecord(state, False, self.max_iter, residual, damping, history)
