"""Tests for the dense imaginary-time contour algebra."""

import math

import numpy as np
import pytest

from coupled_syk_sre.contour import (
    FreeContour,
    enforce_skew,
    factor_sector,
    free_contour,
    lag_matrix,
    pair_rotation,
    quartic_sum,
    replica_block,
    replica_embed,
    self_energy,
    side_signs,
    thermal_block,
)
from coupled_syk_sre.domain import ALL_SECTORS, ParameterError, SectorLabel, SingularSectorError, TauGrid
from coupled_syk_sre.exact_reference import free_sector_log_weight


def _is_skew(g, n_flavors):
    p = side_signs(n_flavors, g.shape[0] // n_flavors)
    return np.max(np.abs(g.T + p[:, None] * g * p[None, :]))


def test_side_signs_alternate():
    np.testing.assert_array_equal(side_signs(4, 2), [1, 1, -1, -1, 1, 1, -1, -1])


def test_enforce_skew_is_a_projection():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((12, 12))
    once = enforce_skew(g, 2)
    assert _is_skew(once, 2) < 1e-14
    np.testing.assert_allclose(enforce_skew(once, 2), once, atol=1e-15)


def test_self_energy_flips_cross_side_sign():
    g = np.full((4, 4), 0.5)
    sigma = self_energy(g, 2.0, 2)
    assert sigma[0, 0] == pytest.approx(0.5)
    assert sigma[0, 2] == pytest.approx(-0.5)
    assert sigma[3, 2] == pytest.approx(0.5)


def test_replica_embedding_round_trip():
    block = np.arange(16.0).reshape(4, 4)
    full = replica_embed(block)
    assert full.shape == (16, 16)
    np.testing.assert_array_equal(replica_block(full, 2, 2, 2), block)
    np.testing.assert_array_equal(replica_block(full, 0, 3, 2), np.zeros((4, 4)))


def test_pair_rotation_is_a_one_parameter_group():
    r = pair_rotation(np.array([0.3, -0.3, 0.5]), 0.8)
    np.testing.assert_allclose(r[0] @ r[1], np.eye(2), atol=1e-14)


def test_untwisted_contour_at_zero_mu():
    grid = TauGrid.for_beta(2.0, 6)
    free = free_contour(grid, 0.0, None)
    m = grid.slices_m
    assert free.log_weight == pytest.approx(4 * math.log(2), abs=1e-12)
    block = replica_block(free.g0, 1, 1, m)
    k, l = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    np.testing.assert_allclose(block[:m, :m], 0.5 * np.sign(k - l), atol=1e-12)
    np.testing.assert_allclose(block[:m, m:], 0.0, atol=1e-12)
    np.testing.assert_allclose(replica_block(free.g0, 0, 1, m), 0.0, atol=1e-12)


@pytest.mark.parametrize("sector", list(ALL_SECTORS) + [None])
def test_free_contour_is_skew(sector):
    grid = TauGrid.for_beta(1.5, 8)
    free = free_contour(grid, 0.7, sector)
    assert free.g0.shape == (64, 64)
    assert _is_skew(free.g0, 8) < 1e-12


@pytest.mark.parametrize("sector", ALL_SECTORS)
def test_free_contour_weight_matches_sector(sector):
    free = free_contour(TauGrid.for_beta(1.5, 8), 0.7, sector)
    assert free.log_weight == pytest.approx(free_sector_log_weight(1.5, 0.7, sector), abs=1e-10)


def test_free_contour_needs_positive_beta():
    with pytest.raises(ParameterError):
        free_contour(TauGrid.for_beta(0.0, 8), 0.7, None)


def test_zero_self_energy_returns_free_propagator():
    grid = TauGrid.for_beta(1.0, 6)
    free = free_contour(grid, 0.4, SectorLabel(1, -1))
    factor = factor_sector(free, np.zeros((12, 12)))
    assert factor.log_det_dressing == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(factor.g, free.g0[:, :12], atol=1e-14)
    assert factor.log_weight(free) == pytest.approx(free.log_weight)
    full = factor_sector(free, np.zeros((48, 48)), all_columns=True)
    np.testing.assert_allclose(full.g, free.g0, atol=1e-14)


def test_negative_determinant_is_reported():
    grid = TauGrid.for_beta(1.0, 4)
    free = FreeContour(grid, 0.0, SectorLabel(1, 1), 1, np.eye(8), 0.0)
    sigma = np.zeros((8, 8))
    sigma[0, 0] = 2.0 / grid.dtau ** 2
    with pytest.raises(SingularSectorError) as info:
        factor_sector(free, sigma, iteration=4)
    assert info.value.iteration == 4
    with pytest.raises(ParameterError):
        factor_sector(free, np.zeros((3, 3)))


def test_lag_matrix_of_constant_step():
    grid = TauGrid.for_beta(2.0, 8)
    lags = lag_matrix(np.full(8, 0.5), 2.0, grid)
    k, l = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    np.testing.assert_allclose(lags, 0.5 * np.sign(k - l), atol=1e-14)
    block = thermal_block(np.full(8, 0.5), np.zeros(8), 2.0, grid)
    assert block.shape == (16, 16)
    assert _is_skew(block, 2) < 1e-14


def test_quartic_sum():
    assert quartic_sum(np.full((4, 4), 0.5), 0.25) == pytest.approx(16 * 0.0625 * 0.0625)
