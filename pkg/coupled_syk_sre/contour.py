"""
Dense two-time algebra on the imaginary-time contour.

A contour carries n_replicas copies of one L/R Majorana pair. Flavor f = 2*alpha + s
(alpha the replica, s = 0 for L and 1 for R); matrices over the contour are
indexed by f * M + k with k the midpoint slice.

Everything returned here lives in the real gauge psi_R -> i psi_R, where
G'_LR = -i G_LR and G'_RL = i G_RL. In this gauge the free propagators are real
and the contour skew relation reads G'^T = -P G' P with P = +1 on L and -1 on R.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as la

from coupled_syk_sre.domain import ParameterError, SectorLabel, SingularSectorError, SpectrumPhaseError, TauGrid
from coupled_syk_sre.exact_reference import twisted_pair_correlators

logger = logging.getLogger(__name__)

N_REPLICAS = 4
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]])


def side_signs(n_flavors: int, slices_m: int) -> np.ndarray:
    """P on the full index: +1 for L rows, -1 for R rows."""
    per_flavor = np.where(np.arange(n_flavors) % 2 == 0, 1.0, -1.0)
    return np.repeat(per_flavor, slices_m)


def interaction_signs(n_flavors: int, slices_m: int) -> np.ndarray:
    """Sign of J^2 G^3 in the real gauge: +1 within a side, -1 across sides."""
    p = side_signs(n_flavors, slices_m)
    return np.outer(p, p)


def enforce_skew(g: np.ndarray, n_flavors: int) -> np.ndarray:
    """Project onto G^T = -P G P (the natural-gauge antisymmetry)."""
    p = side_signs(n_flavors, g.shape[0] // n_flavors)
    return 0.5 * (g - p[:, None] * g.T * p[None, :])


def self_energy(g: np.ndarray, coupling_j: float, n_flavors: int) -> np.ndarray:
    """Sigma = J^2 G^3 elementwise with the real-gauge cross-side sign."""
    signs = interaction_signs(n_flavors, g.shape[0] // n_flavors)
    return coupling_j ** 2 * signs * g ** 3


def replica_block(matrix: np.ndarray, alpha: int, beta_index: int, slices_m: int) -> np.ndarray:
    """The (alpha, beta) 2M x 2M block of a full contour matrix."""
    width = 2 * slices_m
    return matrix[alpha * width:(alpha + 1) * width, beta_index * width:(beta_index + 1) * width]


def replica_embed(block: np.ndarray, n_replicas: int = N_REPLICAS) -> np.ndarray:
    """Replica-diagonal embedding diag(block, ..., block)."""
    return la.block_diag(*([block] * n_replicas))


# ============================================================================
# Free propagators
# ============================================================================

def pair_rotation(tau: np.ndarray, mu: float) -> np.ndarray:
    """e^{tau mu sigma_y} for every tau; psi(tau) = R(tau) psi for one L/R pair."""
    x = mu * np.asarray(tau)
    return np.cosh(x)[:, None, None] * np.eye(2) + np.sinh(x)[:, None, None] * PAULI_Y


def real_gauge_factors(n_flavors: int) -> np.ndarray:
    return np.where(np.arange(n_flavors) % 2 == 0, 1.0 + 0.0j, 1.0j)


def propagator_from_correlators(grid: TauGrid, mu: float, correlators: np.ndarray) -> np.ndarray:
    """
    Free contour propagator R_k [sgn(k-l)/2 + C - 1/2] R_l^T, in the real gauge.

    Args:
        correlators: equal-time C_ab = <psi_a psi_b> on the (possibly twisted) trace
    """
    n_flavors = correlators.shape[0]
    m = grid.slices_m
    pair = pair_rotation(grid.points(), mu)
    rot = np.zeros((m, n_flavors, n_flavors), dtype=complex)
    for alpha in range(n_flavors // 2):
        rot[:, 2 * alpha:2 * alpha + 2, 2 * alpha:2 * alpha + 2] = pair

    x = correlators - 0.5 * np.eye(n_flavors)
    later = np.einsum("kab,bc->kac", rot, x + 0.5 * np.eye(n_flavors))
    earlier = np.einsum("kab,bc->kac", rot, x - 0.5 * np.eye(n_flavors))
    equal = np.einsum("kab,bc->kac", rot, x)

    out = np.empty((n_flavors, m, n_flavors, m), dtype=complex)
    lags = np.arange(m)[:, None, None]
    for k in range(m):
        middle = np.where(lags < k, later[k], np.where(lags > k, earlier[k], equal[k]))
        out[:, k, :, :] = np.einsum("lab,lcb->acl", middle, rot)

    u = real_gauge_factors(n_flavors)
    out = out * (u[:, None, None, None] / u[None, None, :, None])
    imaginary = float(np.max(np.abs(out.imag)))
    if imaginary > 1e-9 * max(1.0, float(np.max(np.abs(out.real)))):
        raise SpectrumPhaseError(f"free propagator keeps an imaginary part {imaginary:.3e} in the real gauge")
    return out.real.reshape(n_flavors * m, n_flavors * m)


@dataclass(frozen=True)
class FreeContour:
    """Free (J=0) propagator and partition function of one pair on a contour."""

    grid: TauGrid
    hopping_mu: float
    sector: Optional[SectorLabel]
    """None for untwisted replicas"""

    n_replicas: int
    g0: np.ndarray
    """(2 n_replicas M)^2 real-gauge propagator"""

    log_weight: float
    """ln tr[e^{-beta H_tot} S] for one pair"""

    @property
    def n_flavors(self) -> int:
        return 2 * self.n_replicas


def free_contour(
    grid: TauGrid,
    mu: float,
    sector: Optional[SectorLabel],
    n_replicas: int = N_REPLICAS,
) -> FreeContour:
    """
    Free propagator of n_replicas copies of one pair, joined by the SWAP twist of `sector`.

    sector=None removes the junctions: the contour is n_replicas disjoint
    antiperiodic circles of length beta.
    """
    beta = grid.beta
    if beta <= 0:
        raise ParameterError("a contour needs beta > 0")
    correlators, log_twist = twisted_pair_correlators(beta, mu, sector, n_replicas=n_replicas)
    half = beta * mu / 2
    log_z = half + math.log1p(math.exp(-2 * half))
    g0 = propagator_from_correlators(grid, mu, correlators)
    logger.debug("free contour %s on %d replicas, M=%d", sector, n_replicas, grid.slices_m)
    return FreeContour(
        grid=grid,
        hopping_mu=mu,
        sector=sector,
        n_replicas=n_replicas,
        g0=g0,
        log_weight=n_replicas * log_z + log_twist,
    )


# ============================================================================
# Time-translation-invariant seeds
# ============================================================================

def lag_matrix(g_tau: np.ndarray, period: float, grid: TauGrid) -> np.ndarray:
    """
    g(tau_k - tau_l) on `grid` from samples of an antiperiodic function.

    g_tau holds values at the midpoints of [0, period); lags are extended
    antiperiodically and linearly interpolated, so lag 0 gets the average of
    g(0+) and g(0-).
    """
    n = g_tau.size
    step = period / n
    nodes = (np.arange(-n, n) + 0.5) * step
    values = np.concatenate([-g_tau, g_tau])
    pts = grid.points()
    lags = pts[:, None] - pts[None, :]
    return np.interp(lags, nodes, values)


def thermal_block(g_ll: np.ndarray, g_lr: np.ndarray, period: float, grid: TauGrid) -> np.ndarray:
    """2M x 2M real-gauge block [[G_LL, G_LR], [G_LR, G_LL]] built from lag functions."""
    ll = lag_matrix(g_ll, period, grid)
    lr = lag_matrix(g_lr, period, grid)
    return np.block([[ll, lr], [lr, ll]])


# ============================================================================
# Dressed propagators
# ============================================================================

@dataclass(frozen=True)
class ContourFactor:
    """g = (1 - dtau^2 G0 Sigma)^{-1} G0 with the determinant of the same factorization."""

    log_det_dressing: float
    """ln det(1 - dtau^2 G0 Sigma); positive determinant enforced"""

    g: np.ndarray
    """Columns of g: replica 0 only (8M x 2M) or every column"""

    def log_weight(self, free: FreeContour) -> float:
        """ln of z_free * det(1 - dtau^2 G0 Sigma)^{1/2}."""
        return free.log_weight + 0.5 * self.log_det_dressing


def factor_sector(
    free: FreeContour,
    sigma: np.ndarray,
    iteration: int = 0,
    all_columns: bool = False,
) -> ContourFactor:
    """
    Dress the free contour propagator with a self-energy.

    Args:
        sigma: either one replica-diagonal 2M x 2M block or a full contour matrix
        iteration: reported in SingularSectorError
        all_columns: solve for every column instead of replica 0 only

    Raises:
        SingularSectorError if the factorization is singular or the
        determinant is negative
    """
    g0 = free.g0
    width = 2 * free.grid.slices_m
    dt2 = free.grid.dtau ** 2
    if sigma.shape == (width, width) and free.n_replicas > 1:
        dressing = np.empty_like(g0)
        for alpha in range(free.n_replicas):
            cols = slice(alpha * width, (alpha + 1) * width)
            dressing[:, cols] = g0[:, cols] @ sigma
    elif sigma.shape == g0.shape:
        dressing = g0 @ sigma
    else:
        raise ParameterError(f"self-energy of shape {sigma.shape} does not fit a contour of size {g0.shape[0]}")
    a = np.eye(g0.shape[0]) - dt2 * dressing

    lu, piv = la.lu_factor(a)
    diagonal = np.diag(lu)
    if np.any(diagonal == 0.0):
        raise SingularSectorError(free.sector, iteration, "singular dressing matrix")
    swaps = int(np.count_nonzero(piv != np.arange(piv.size)))
    sign = (-1) ** swaps * int(np.prod(np.sign(diagonal)))
    if sign < 0:
        raise SingularSectorError(free.sector, iteration, "negative determinant")
    rhs = g0 if all_columns else g0[:, :width]
    return ContourFactor(
        log_det_dressing=float(np.sum(np.log(np.abs(diagonal)))),
        g=la.lu_solve((lu, piv), rhs),
    )


def quartic_sum(g: np.ndarray, dtau: float) -> float:
    """dtau^2 sum G^4 over a contour matrix (gauge invariant)."""
    return float(dtau ** 2 * np.sum(g ** 4))
