"""Tests for the exact-diagonalization reference: operators, spectra and the two SRE paths."""

import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from coupled_syk_sre.domain import (
    ALL_SECTORS,
    DimensionCapError,
    DisorderSampleError,
    ModelParams,
    OracleMismatchError,
    ParameterError,
    SectorLabel,
)
from coupled_syk_sre.exact_reference import (
    SreValues,
    boltzmann_operator,
    build_hamiltonian,
    build_majorana_ops,
    disorder_average,
    draw_couplings,
    ed_sre,
    free_pair_m2,
    free_sector_log_weight,
    log_partition,
    majorana_spectrum,
    majorana_string,
    sre_direct,
    sre_replicated,
    thermal_state,
    twisted_pair_correlators,
)


@pytest.fixture(scope="module")
def ops6():
    return build_majorana_ops(6)


def _thermal(n_per_side, j, mu, beta, seed=0):
    params = ModelParams(n_per_side, j, mu, beta)
    ops = build_majorana_ops(2 * n_per_side)
    h = build_hamiltonian(params, draw_couplings(n_per_side, j, seed), ops)
    return params, ops, h


def test_majoranas_anticommute(ops6):
    psi = ops6.ops
    eye = np.eye(ops6.dim)
    for a, b in itertools.product(range(6), repeat=2):
        anti = psi[a] @ psi[b] + psi[b] @ psi[a]
        np.testing.assert_allclose(anti, eye if a == b else 0 * eye, atol=1e-14)
        np.testing.assert_allclose(psi[a], psi[a].conj().T, atol=1e-14)


def test_monomial_product_matches_dense(ops6):
    product = ops6.monomials[1] @ ops6.monomials[4]
    np.testing.assert_allclose(product.dense(), ops6.ops[1] @ ops6.ops[4], atol=1e-14)


def test_strings_are_hermitian_involutions_and_orthonormal(ops6):
    vectors = [v for v in itertools.product((0, 1), repeat=6)]
    rng = np.random.default_rng(1)
    picked = [vectors[i] for i in rng.choice(len(vectors), size=12, replace=False)]
    mats = [majorana_string(ops6, v).matrix for v in picked]
    eye = np.eye(ops6.dim)
    for i, a in enumerate(mats):
        np.testing.assert_allclose(a, a.conj().T, atol=1e-12)
        np.testing.assert_allclose(a @ a, eye, atol=1e-12)
        for j, b in enumerate(mats):
            overlap = np.trace(a @ b) / ops6.dim
            assert overlap == pytest.approx(1.0 if i == j else 0.0, abs=1e-12)


def test_operator_caps():
    with pytest.raises(DimensionCapError):
        build_majorana_ops(18)
    with pytest.raises(ParameterError):
        build_majorana_ops(5)
    with pytest.raises(DimensionCapError):
        sre_replicated(np.eye(32), 5)


def test_couplings_are_reproducible():
    a = draw_couplings(6, 1.0, seed=11)
    b = draw_couplings(6, 1.0, seed=11)
    c = draw_couplings(6, 1.0, seed=12)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.indices.shape == (15, 4)
    assert draw_couplings(3, 1.0, seed=0).values.size == 0


def test_thermal_state_is_normalized():
    _, _, h = _thermal(4, 1.0, 0.3, 2.0)
    rho = thermal_state(h, 2.0)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    boltzmann, offset = boltzmann_operator(h, 2.0)
    assert math.log(np.trace(boltzmann).real) - offset == pytest.approx(log_partition(h, 2.0), abs=1e-10)
    with pytest.raises(ParameterError):
        thermal_state(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)


def test_spectrum_normalization_and_parseval():
    _, ops, h = _thermal(4, 1.0, 0.2, 1.5, seed=3)
    rho = thermal_state(h, 1.5)
    spectrum = majorana_spectrum(rho, ops)
    assert spectrum.coefficient([0] * 8) == pytest.approx(1.0, abs=1e-12)
    purity = float(np.real(np.trace(rho @ rho)))
    assert spectrum.moment(2) == pytest.approx(2 ** 4 * purity, rel=1e-10)
    assert np.all(np.abs(spectrum.values) <= 1 + 1e-12)
    assert spectrum.coefficient([1, 0, 0, 0, 0, 0, 0, 0]) == 0.0


def test_infinite_temperature_anchor():
    values = ed_sre(ModelParams(3, 1.0, 0.4, 0.0), seed=0)
    assert values.m2 == pytest.approx(3 * math.log(2), abs=1e-12)
    assert values.s2 == pytest.approx(3 * math.log(2), abs=1e-12)
    assert values.m2_tilde == pytest.approx(0.0, abs=1e-12)


def test_free_pair_formula():
    t = math.tanh(1.0)
    assert free_pair_m2(2.0) == pytest.approx(-math.log((1 + t ** 4) / 2), abs=1e-14)
    assert free_pair_m2(2.0) == pytest.approx(0.4031454, abs=1e-6)
    assert free_pair_m2(0.0) == pytest.approx(math.log(2))
    with pytest.raises(ParameterError):
        free_pair_m2(-1.0)


def test_free_model_matches_closed_form():
    values = ed_sre(ModelParams(4, 0.0, 2.0, 1.0), seed=0)
    assert values.per_qubit(4).m2 == pytest.approx(free_pair_m2(2.0), abs=1e-8)


@pytest.mark.parametrize("n_per_side, seed", [(2, 0), (3, 5)])
@pytest.mark.parametrize("beta", [1.0, 5.0])
def test_replicated_trace_matches_direct(n_per_side, seed, beta):
    params, ops, h = _thermal(n_per_side, 1.0, 0.3, beta, seed=seed)
    boltzmann, offset = boltzmann_operator(h, beta)
    rho = boltzmann / np.trace(boltzmann).real
    direct = sre_direct(majorana_spectrum(rho, ops), rho)
    replicated = sre_replicated(boltzmann, n_per_side, log_offset=offset, check_against=direct, tolerance=1e-9)
    assert replicated.m2 == pytest.approx(direct.m2, abs=1e-9)
    assert replicated.s_beta == pytest.approx(-log_partition(h, beta), abs=1e-9)


def test_replicated_trace_flags_mismatch():
    _, _, h = _thermal(2, 1.0, 0.3, 1.0)
    boltzmann, offset = boltzmann_operator(h, 1.0)
    with pytest.raises(OracleMismatchError):
        sre_replicated(boltzmann, 2, log_offset=offset, check_against=SreValues(0.0, 0.0, 0.0))


def test_disorder_average_is_ordered_and_threaded():
    serial = disorder_average(lambda s: float(s), 5, seed=10)
    threaded = disorder_average(lambda s: float(s), 5, seed=10, max_workers=3)
    assert serial.seeds == (10, 11, 12, 13, 14)
    assert serial.mean == pytest.approx(12.0)
    assert serial.stderr == pytest.approx(math.sqrt(2.5 / 5))
    np.testing.assert_array_equal(serial.values, threaded.values)


def test_disorder_average_reports_failing_sample():
    def estimator(seed):
        if seed == 7:
            raise RuntimeError("bad sample")
        return 1.0

    with pytest.raises(DisorderSampleError) as info:
        disorder_average(estimator, 4, seed=5)
    assert info.value.offset == 2 and info.value.seed == 7
    with pytest.raises(ParameterError):
        disorder_average(estimator, 1, seed=0)


def test_ed_average_is_deterministic():
    params = ModelParams(4, 1.0, 0.1, 2.0)
    first = disorder_average(lambda s: ed_sre(params, s).m2, 2, seed=3)
    second = disorder_average(lambda s: ed_sre(params, s).m2, 2, seed=3)
    np.testing.assert_array_equal(first.values, second.values)


def test_sector_weights_sum_to_free_pair():
    beta, mu = 1.3, 0.8
    logs = [free_sector_log_weight(beta, mu, s) for s in ALL_SECTORS]
    t = math.tanh(beta * mu / 2)
    z = 2 * math.cosh(beta * mu / 2)
    assert logsumexp(logs) == pytest.approx(4 * math.log(z) + math.log1p(t ** 4), abs=1e-12)


@pytest.mark.parametrize("sector", ALL_SECTORS)
def test_twisted_trace_matches_sector_weight(sector):
    beta, mu = 1.3, 0.8
    corr, log_twist = twisted_pair_correlators(beta, mu, sector)
    log_z = math.log(2 * math.cosh(beta * mu / 2))
    assert 4 * log_z + log_twist == pytest.approx(free_sector_log_weight(beta, mu, sector), abs=1e-10)
    np.testing.assert_allclose(corr + corr.T, np.eye(8), atol=1e-10)


def test_untwisted_correlators():
    beta, mu = 2.0, 0.6
    corr, log_twist = twisted_pair_correlators(beta, mu, None)
    assert log_twist == pytest.approx(0.0, abs=1e-12)
    assert abs(corr[0, 1]) == pytest.approx(0.5 * math.tanh(beta * mu / 2), abs=1e-12)
    assert abs(corr[0, 2]) == pytest.approx(0.0, abs=1e-12)
