"""Tests for the thermal Schwinger-Dyson solver (Matsubara and dense-contour paths)."""

import math

import numpy as np
import pytest

from coupled_syk_sre.domain import ModelParams, ParameterError, TauGrid, UnconvergedSaddleError
from coupled_syk_sre.thermal_solver import (
    BLACK_HOLE,
    WORMHOLE,
    WORMHOLE_SEED,
    extract_s0,
    free_green_tau,
    hp_scan,
    ln_z,
    log_2cosh,
    renyi2,
    solve_thermal,
    solve_thermal_contour,
    thermal_entropy,
    thermal_reference,
    to_frequency,
    to_time,
)
from utils.solver_config import SolverSettings

SETTINGS = SolverSettings(thermal_tol=1e-11, sre_tol=1e-9, max_iter=3000, damping=0.5)


def test_transforms_invert():
    grid = TauGrid.for_beta(3.0, 64)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(64)
    np.testing.assert_allclose(to_time(to_frequency(f, grid), grid).real, f, atol=1e-12)
    np.testing.assert_allclose(to_time(to_frequency(f, grid), grid).imag, 0.0, atol=1e-12)


def test_free_green_is_antiperiodic_two_level():
    grid = TauGrid.for_beta(4.0, 40)
    g_ll, g_lr = free_green_tau(grid, 0.7)
    np.testing.assert_allclose(g_ll, g_ll[::-1], atol=1e-14)
    np.testing.assert_allclose(g_lr, -g_lr[::-1], atol=1e-14)
    tau = grid.points()
    expected = np.cosh(0.7 * (2.0 - tau)) / (2 * np.cosh(1.4))
    np.testing.assert_allclose(g_ll, expected, atol=1e-14)


def test_large_beta_mu_stays_finite():
    grid = TauGrid.for_beta(2000.0, 64)
    g_ll, g_lr = free_green_tau(grid, 1.0)
    assert np.all(np.isfinite(g_ll)) and np.all(np.isfinite(g_lr))
    assert log_2cosh(1000.0) == pytest.approx(1000.0)


def test_free_model_closed_form():
    params = ModelParams(3, 0.0, 0.8, 2.5)
    grid = TauGrid.for_beta(2.5, 32)
    saddle = solve_thermal(params, grid, settings=SETTINGS)
    assert saddle.converged
    np.testing.assert_allclose(saddle.green.g_ll, free_green_tau(grid, 0.8)[0], atol=1e-12)
    assert saddle.ln_z == pytest.approx(3 * log_2cosh(1.0), abs=1e-12)
    assert ln_z(params, saddle) == pytest.approx(saddle.ln_z)


def test_infinite_temperature():
    params = ModelParams(2, 1.0, 0.3, 0.0)
    saddle = solve_thermal(params, TauGrid.for_beta(0.0, 16))
    assert saddle.ln_z == pytest.approx(2 * math.log(2))
    reference = thermal_reference(params, TauGrid.for_beta(0.0, 16))
    assert reference.s2_per_n == pytest.approx(math.log(2))


def test_high_temperature_expansion():
    # ln Z per pair = ln 2 + (beta J)^2 / 64 + O((beta J)^4)
    params = ModelParams(1, 1.0, 0.0, 0.3)
    saddle = solve_thermal(params, TauGrid.for_beta(0.3, 256), settings=SETTINGS)
    assert saddle.converged
    assert saddle.ln_z - math.log(2) == pytest.approx(0.09 / 64, rel=0.1)


def test_coupled_solution_symmetries():
    params = ModelParams(1, 1.0, 0.2, 4.0)
    saddle = solve_thermal(params, TauGrid.for_beta(4.0, 128), WORMHOLE_SEED, SETTINGS)
    assert saddle.converged
    assert saddle.branch_tag == WORMHOLE
    np.testing.assert_allclose(saddle.green.g_ll, saddle.green.g_ll[::-1], atol=1e-8)
    np.testing.assert_allclose(saddle.green.g_lr, -saddle.green.g_lr[::-1], atol=1e-8)
    assert saddle.green.g_ll[0] == pytest.approx(0.5, abs=0.05)


def test_decoupled_clusters_have_no_lr_correlation():
    params = ModelParams(1, 1.0, 0.0, 3.0)
    saddle = solve_thermal(params, TauGrid.for_beta(3.0, 128), settings=SETTINGS)
    assert saddle.converged
    np.testing.assert_allclose(saddle.green.g_lr, 0.0, atol=1e-12)


def test_warm_start_reuses_shape_and_tag():
    params = ModelParams(1, 1.0, 0.1, 2.0)
    first = solve_thermal(params, TauGrid.for_beta(2.0, 64), "black-hole-seed", SETTINGS)
    assert first.branch_tag == BLACK_HOLE
    second = solve_thermal(params.with_beta(2.2), TauGrid.for_beta(2.2, 128), first, SETTINGS)
    assert second.converged and second.branch_tag == BLACK_HOLE


def test_unconverged_saddle_is_flagged():
    params = ModelParams(1, 1.0, 0.1, 5.0)
    saddle = solve_thermal(params, TauGrid.for_beta(5.0, 64), settings=SolverSettings(max_iter=2))
    assert not saddle.converged
    with pytest.raises(UnconvergedSaddleError):
        ln_z(params, saddle)


def test_unknown_init_is_rejected():
    with pytest.raises(ParameterError):
        solve_thermal(ModelParams(1, 1.0, 0.1, 1.0), TauGrid.for_beta(1.0, 16), "hot")


def test_free_thermodynamics():
    params = ModelParams(1, 0.0, 1.0, 2.0)
    thermo = thermal_entropy(params, 32, settings=SETTINGS)
    assert thermo.converged
    assert thermo.energy == pytest.approx(-0.5 * math.tanh(1.0), abs=1e-6)
    assert thermo.entropy == pytest.approx(log_2cosh(1.0) - math.tanh(1.0), abs=1e-6)


@pytest.mark.parametrize("method", ["contour", "matsubara"])
def test_free_renyi2_reference(method):
    params = ModelParams(1, 0.0, 1.0, 1.5)
    reference = thermal_reference(params, TauGrid.for_beta(1.5, 32), method, SETTINGS)
    assert reference.converged
    assert reference.method == method
    assert reference.s2_per_n == pytest.approx(2 * log_2cosh(0.75) - log_2cosh(1.5), abs=1e-12)


def test_contour_variant_free_limit():
    params = ModelParams(2, 0.0, 0.6, 2.0)
    saddle = solve_thermal_contour(params, TauGrid.for_beta(2.0, 16), settings=SETTINGS)
    assert saddle.converged
    assert saddle.action_per_n == pytest.approx(-log_2cosh(0.6), abs=1e-12)


def test_contour_variant_tracks_matsubara():
    params = ModelParams(1, 1.0, 0.1, 2.0)
    grid = TauGrid.for_beta(2.0, 64)
    matsubara = solve_thermal(params, grid, settings=SETTINGS)
    contour = solve_thermal_contour(params, grid, matsubara, SETTINGS)
    assert contour.converged
    assert contour.action_per_n == pytest.approx(matsubara.action_per_n, abs=2e-2)
    with pytest.raises(ParameterError):
        solve_thermal_contour(params.with_beta(0.0), TauGrid.for_beta(0.0, 16))


def test_free_renyi2_scales_with_n():
    params = ModelParams(3, 0.0, 1.0, 1.5)
    expected = 3 * (2 * log_2cosh(0.75) - log_2cosh(1.5))
    assert renyi2(params, TauGrid.for_beta(1.5, 16), SETTINGS) == pytest.approx(expected, abs=1e-10)


def test_free_hp_scan_is_a_crossover():
    from coupled_syk_sre.sweep_driver import fixed_slices

    scan = hp_scan(ModelParams(1, 0.0, 1.0, 0.5), [0.5, 1.0, 2.0], fixed_slices(16), SETTINGS)
    assert not scan.transition.is_transition
    np.testing.assert_allclose(scan.black_hole.action_values, scan.wormhole.action_values, atol=1e-10)


@pytest.mark.slow
def test_zero_temperature_entropy_fit():
    fit = extract_s0([50.0, 100.0, 200.0, 400.0], 2 ** 14, settings=SETTINGS)
    assert fit.converged
    assert fit.s0 == pytest.approx(0.2324, abs=3e-3)
