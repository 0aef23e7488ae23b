"""Tests for the four-replica SRE saddle solver."""

import math

import numpy as np
import pytest

from coupled_syk_sre.domain import (
    ALL_SECTORS,
    ModelParams,
    ParameterError,
    SectorLabel,
    TauGrid,
    UnconvergedSaddleError,
)
from coupled_syk_sre.exact_reference import free_pair_m2, free_sector_log_weight
from coupled_syk_sre.sre_solver import (
    CONNECTED,
    DISCONNECTED,
    INDETERMINATE,
    ReplicaGreen,
    SectorTopology,
    SelfEnergy,
    action_sre,
    build_kinetic,
    connectivity_diagnostic,
    full_replica_check,
    iterate_sre,
    pairing_gap,
    sector_weights,
    solve_sector,
)
from utils.solver_config import SolverSettings

SETTINGS = SolverSettings(thermal_tol=1e-11, sre_tol=1e-9, max_iter=2000, damping=0.5)


@pytest.mark.parametrize("sector", list(ALL_SECTORS) + [None])
@pytest.mark.parametrize("side", [0, 1])
def test_every_loop_is_antiperiodic(sector, side):
    topology = SectorTopology(sector)
    assert topology.loop_sign(side, 0) == -1
    assert topology.loop_sign(side, 3) == -1


def test_junction_signs_follow_the_sector():
    topology = SectorTopology(SectorLabel(1, -1))
    assert topology.junction_sign(0, 0, 1) == 1
    assert topology.junction_sign(0, 1, 0) == -1
    assert topology.junction_sign(1, 2, 3) == -1
    assert topology.junction_sign(1, 0, 2) == 0
    assert not SectorTopology(None).joined


def test_sector_weights():
    np.testing.assert_allclose(sector_weights([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(sector_weights([0.0, math.inf]), [1.0, 0.0])
    np.testing.assert_allclose(sector_weights([0.0, 2.0]), [1 / (1 + math.exp(-1)), 1 / (1 + math.e)])
    np.testing.assert_allclose(sector_weights([-2 * math.log(4)] * 4), [0.25] * 4)
    np.testing.assert_allclose(sector_weights([1e4, 1e4 + 2.0]), sector_weights([0.0, 2.0]))
    with pytest.raises(ParameterError):
        sector_weights([math.inf, math.inf])


def test_infinite_temperature_anchor():
    result = iterate_sre(ModelParams(2, 1.0, 0.3, 0.0), TauGrid.for_beta(0.0, 8))
    assert result.converged
    assert result.s_sre_per_n == pytest.approx(-4 * math.log(2))
    assert result.m2_per_n == pytest.approx(math.log(2))
    assert result.m2_tilde_per_n == pytest.approx(0.0)
    assert set(result.sector_weights.values()) == {0.25}


@pytest.mark.parametrize("slices_m", [4, 16])
def test_free_decoupled_anchor_is_exact(slices_m):
    result = iterate_sre(ModelParams(1, 0.0, 0.0, 1.0), TauGrid.for_beta(1.0, slices_m), settings=SETTINGS)
    assert result.converged
    assert result.s_sre_per_n == pytest.approx(-4 * math.log(2), abs=1e-12)
    assert result.m2_per_n == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("beta_j, slices_m", [(1.0, 16), (5.0, 32)])
def test_zero_hopping_magic_is_flat(beta_j, slices_m):
    # M2 / N = ln 2 holds at every slice count once S_beta shares the SRE grid
    params = ModelParams(1, 1.0, 0.0, beta_j)
    result = iterate_sre(params, TauGrid.for_beta(beta_j, slices_m), settings=SETTINGS)
    assert result.converged
    assert abs(result.m2_per_n - math.log(2)) < 1e-8


def test_free_pair_closed_form():
    params = ModelParams(3, 0.0, 2.0, 1.0)
    result = iterate_sre(params, TauGrid.for_beta(1.0, 16), settings=SETTINGS)
    assert result.m2_per_n == pytest.approx(free_pair_m2(2.0), abs=1e-10)
    assert result.m2 == pytest.approx(3 * free_pair_m2(2.0), abs=1e-9)
    weights = result.sector_weights
    assert weights[SectorLabel(1, 1)] == pytest.approx(weights[SectorLabel(-1, -1)])
    assert weights[SectorLabel(1, 1)] > weights[SectorLabel(1, -1)]
    assert sum(weights.values()) == pytest.approx(1.0)


def test_free_limit_is_disconnected():
    result = iterate_sre(ModelParams(1, 0.0, 0.0, 2.0), TauGrid.for_beta(2.0, 16), settings=SETTINGS)
    assert result.branch_tag == DISCONNECTED


def test_connectivity_diagnostic_thresholds():
    grid = TauGrid.for_beta(1.0, 16)
    x = np.linspace(0.0, 1.0, 16)
    rows = {
        DISCONNECTED: np.full(16, 0.5),
        CONNECTED: 0.4 * np.exp(-5.0 * x),
        INDETERMINATE: np.linspace(0.5, 0.25, 16),
    }
    for expected, row in rows.items():
        block = np.zeros((32, 32))
        block[0, :16] = row
        assert connectivity_diagnostic(ReplicaGreen(block, grid)) == expected


def test_sector_pairing_in_debug_mode():
    params = ModelParams(1, 1.0, 0.3, 2.0)
    result = iterate_sre(params, TauGrid.for_beta(2.0, 12), settings=SETTINGS, debug_sectors=True)
    assert result.converged
    assert pairing_gap(result.sector_greens) <= 1e-8
    assert [g.sector for g in result.sector_greens] == list(ALL_SECTORS)
    assert result.idempotence_residual < 1e-6


def test_interacting_result_is_consistent():
    params = ModelParams(2, 1.0, 0.2, 2.0)
    result = iterate_sre(params, TauGrid.for_beta(2.0, 12), settings=SETTINGS)
    assert result.converged
    assert result.m2_per_n == pytest.approx(result.s_sre_per_n - 4 * result.s_beta_per_n + math.log(2))
    assert result.m2_tilde_per_n == pytest.approx(result.m2_per_n - result.s2_per_n)
    assert result.to_dict()["branch"] == result.branch_tag
    assert result.self_energy.residual(result.green) < 1e-12


def test_action_requires_converged_green():
    grid = TauGrid.for_beta(1.0, 4)
    green = ReplicaGreen(np.zeros((8, 8)), grid, converged=False)
    with pytest.raises(UnconvergedSaddleError):
        action_sre([], green, SelfEnergy(np.zeros((8, 8)), 1.0, grid))


def test_replica_green_resampling_keeps_skew():
    grid = TauGrid.for_beta(1.0, 8)
    block = np.zeros((16, 16))
    k, l = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    block[:8, :8] = 0.5 * np.sign(k - l)
    block[8:, 8:] = 0.5 * np.sign(k - l)
    finer = ReplicaGreen(block, grid).resampled(TauGrid.for_beta(1.0, 16))
    assert finer.g.shape == (32, 32)
    np.testing.assert_allclose(finer.g, -finer.g.T, atol=1e-14)
    assert ReplicaGreen(block, grid).off_diagonal_norm() == 0.0


def test_full_replica_check_limits():
    with pytest.raises(ParameterError):
        full_replica_check(ModelParams(1, 1.0, 0.0, 1.0), 130, [1.0])
    with pytest.raises(ParameterError):
        full_replica_check(ModelParams(1, 0.0, 0.5, 1.0), 8, [1.0])


def test_full_replica_check_relaxes_a_kick():
    points = full_replica_check(
        ModelParams(1, 1.0, 0.1, 1.0), 8, [1.0], perturbation=1e-3, seed=4, settings=SETTINGS,
    )
    assert len(points) == 1
    assert points[0].converged
    assert points[0].off_diagonal_norm < 1e-6


@pytest.mark.parametrize("sector", ALL_SECTORS)
def test_undressed_sector_solve_is_free(sector):
    grid = TauGrid.for_beta(1.5, 8)
    kinetic = build_kinetic(grid, sector, 0.8)
    assert build_kinetic(grid, sector, 0.8) is kinetic
    zero = SelfEnergy(np.zeros((16, 16)), 1.0, grid)
    solved = solve_sector(sector, zero, kinetic)
    np.testing.assert_allclose(solved.g, kinetic.g0[:16, :16], atol=1e-14)
    assert solved.log_det == pytest.approx(-2 * free_sector_log_weight(1.5, 0.8, sector))
    assert solved.paired().sector == sector.paired()


def test_kinetic_cache_is_bounded():
    assert build_kinetic.cache_info().maxsize == 2
    sector = ALL_SECTORS[0]
    grids = [TauGrid.for_beta(1.0, m) for m in (4, 6, 8)]
    for grid in grids:
        build_kinetic(grid, sector, 0.5)
    assert build_kinetic.cache_info().currsize <= 2
