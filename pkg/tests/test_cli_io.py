"""Tests for config parsing, CSV emission and run dispatch."""

import csv
import math

import numpy as np
import pytest

from coupled_syk_sre import cli_io
from coupled_syk_sre.cli_io import (
    CSV_COLUMNS,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PARTIAL,
    PROFILE_COLUMNS,
    RunManifest,
    config_hash,
    emit_csv,
    format_config,
    main,
    parse_config,
    run,
    transition_rows,
)
from coupled_syk_sre.domain import ConfigError
from coupled_syk_sre.exact_reference import free_pair_m2
from coupled_syk_sre.sre_solver import CONNECTED_SEED, DISCONNECTED_SEED
from coupled_syk_sre.sweep_driver import BranchCurve, TransitionEstimate
from coupled_syk_sre.thermal_solver import log_2cosh
from utils.solver_config import SolverSettings

SETTINGS = SolverSettings(thermal_tol=1e-11, sre_tol=1e-9, max_iter=2000, damping=0.5)

FREE_SRE = """\
# free pair, exact anchor
mode=sre
N=1
J=0
mu=1.0
beta=2.0
M=8
"""


def read_rows(path):
    with open(path) as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def problems_of(text, mode=None):
    with pytest.raises(ConfigError) as info:
        parse_config(text, mode=mode)
    return info.value.problems


def test_parse_valid_config():
    config = parse_config(FREE_SRE)
    assert config.mode == "sre"
    assert config.coupling_j == 0.0
    assert config.slices_m == 8
    assert config.params.beta == 2.0
    assert config.grid.dtau == pytest.approx(0.25)
    assert config.slice_counts == (8,)


def test_parse_collects_every_problem():
    problems = problems_of("mode=sre\nN=1\nslcies_m=8\nJ=abc\nnonsense\nN=2\n")
    joined = "\n".join(problems)
    assert "line 3: unknown key 'slcies_m'" in joined
    assert "line 4: bad value for J" in joined
    assert "line 5: expected key=value" in joined
    assert "line 6: duplicate key 'N'" in joined
    assert "missing required key 'M'" in joined
    assert "missing required key 'mu'" in joined


def test_parse_reports_semantic_problems():
    problems = problems_of("mode=sre\nN=1\nJ=-1\nmu=0\nbeta=1\nM=7\ndamping=1.5\n")
    joined = "\n".join(problems)
    assert "negative coupling" in joined
    assert "odd slice count: slices_m=7" in joined
    assert "damping must lie in (0, 1]" in joined


def test_parse_enforces_grid_policy():
    problems = problems_of("mode=sweep\nN=1\nJ=1\nmu=0.1\nM=16\nbeta_grid=1,3,4\n")
    assert any("grid policy" in p and "missing partners for 1" in p for p in problems)
    parse_config("mode=sweep\nN=1\nJ=1\nmu=0.1\nM=16\nbeta_grid=1,2,3,4\n")


def test_parse_mode_checks():
    assert any("does not match" in p for p in problems_of(FREE_SRE, mode="thermal"))
    assert any("unknown mode" in p for p in problems_of("mode=plot\n"))
    assert any("beta (or beta_grid)" in p for p in problems_of("mode=thermal\nN=1\nJ=1\nmu=0\nM=8\n"))
    assert any("init" in p for p in problems_of(FREE_SRE + "init=wormhole-seed\n"))
    assert parse_config("", mode="check").mode == "check"


def test_format_config_round_trip():
    for text in (
        FREE_SRE + "tol=1e-9\ndebug_sectors=true\ninit=connected-seed\n",
        "mode=ed\nN=2\nJ=1\nmu=0.5\nbeta=1.5\nsamples=4\nseed=0\nreplicated=yes\n",
        "mode=sweep\nN=1\nJ=1\nmu=0.1\nM_list=16,32\nM=16\nbeta_grid=0.5,1,2\n",
    ):
        config = parse_config(text)
        assert parse_config(format_config(config)) == config


def test_config_hash_tracks_text():
    assert config_hash(FREE_SRE) == config_hash(FREE_SRE)
    assert config_hash(FREE_SRE) != config_hash(FREE_SRE + "\n")
    assert len(config_hash("")) == 64


def test_emit_csv_header_only(tmp_path):
    path = emit_csv([], tmp_path / "empty.csv", config_sha256="abc")
    lines = path.read_text().splitlines()
    assert lines == ["# config_sha256=abc", ",".join(CSV_COLUMNS)]


def test_emit_csv_marks_gaps(tmp_path):
    curve = BranchCurve(
        beta_values=np.array([1.0, 2.0]),
        action_values=np.array([-0.5, math.nan]),
        observable_values=np.array([0.125, math.nan]),
        observable="m2",
        seed_tag="dominant",
        converged=np.array([True, False]),
        branch_tags=("disconnected-seed", "gap"),
        coupling_j=2.0,
    )
    rows = read_rows(emit_csv(curve, tmp_path / "curve.csv"))
    assert rows[0]["betaJ"] == "2"
    assert rows[0]["m2_per_N"] == "0.125"
    assert rows[0]["converged"] == "true"
    assert rows[1]["action_per_N"] == ""
    assert rows[1]["m2_per_N"] == ""
    assert rows[1]["s2_per_N"] == ""
    assert rows[1]["branch"] == "gap"
    assert rows[1]["converged"] == "false"


def test_transition_rows_for_crossover():
    rows = transition_rows([TransitionEstimate("HP", "crossover")], 1.0)
    assert rows[0]["beta_star"] is None
    assert rows[0]["bracket_low"] is None


def test_manifest_lines(tmp_path):
    manifest = RunManifest(config_text=FREE_SRE, mode="sre")
    manifest.record_point("sre@2", True, 1e-12, 0.5, iterations=3)
    manifest.flags["threads"] = 1
    text = manifest.write(tmp_path / "manifest.txt").read_text()
    assert f"config_sha256={config_hash(FREE_SRE)}" in text
    assert "point.0.label=sre@2" in text
    assert "point.0.iterations=3" in text
    assert "flag.threads=1" in text
    assert "config.1=mode=sre" in text
    assert manifest.all_converged


def test_free_sre_run_is_deterministic(tmp_path):
    config = parse_config(FREE_SRE)
    first = run(config, SETTINGS, config_text=FREE_SRE, out_dir=tmp_path / "a")
    second = run(config, SETTINGS, config_text=FREE_SRE, out_dir=tmp_path / "b")
    assert first.exit_code == EXIT_OK
    assert (tmp_path / "a" / "sre.csv").read_bytes() == (tmp_path / "b" / "sre.csv").read_bytes()
    row = read_rows(tmp_path / "a" / "sre.csv")[0]
    expected = -4 * log_2cosh(1.0) - math.log1p(math.tanh(1.0) ** 4)
    assert float(row["action_per_N"]) == pytest.approx(expected, abs=1e-9)
    assert float(row["m2_per_N"]) == pytest.approx(free_pair_m2(2.0), abs=1e-9)
    manifest = (tmp_path / "a" / "manifest.txt").read_text()
    assert "status=completed" in manifest
    assert "output.0=sre.csv" in manifest


def test_thermal_run_writes_reference(tmp_path):
    text = "mode=thermal\nN=1\nJ=0\nmu=1\nbeta=2\nM=16\n"
    outcome = run(parse_config(text), SETTINGS, config_text=text, out_dir=tmp_path)
    assert outcome.exit_code == EXIT_OK
    row = read_rows(tmp_path / "thermal.csv")[0]
    assert float(row["action_per_N"]) == pytest.approx(-log_2cosh(1.0), abs=1e-10)
    s2 = float(row["s2_per_N"])
    assert s2 == pytest.approx(-log_2cosh(2.0) + 2 * log_2cosh(1.0), abs=1e-10)


def test_main_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("mode=sre\nN=1\nslcies_m=8\n")
    assert main(["sre", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "unknown key 'slcies_m'" in capsys.readouterr().out
    assert main(["sre", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_main_runs_free_model(tmp_path):
    path = tmp_path / "free.cfg"
    path.write_text(FREE_SRE)
    assert main(["sre", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert (tmp_path / "out" / "manifest.txt").exists()
    first_line = (tmp_path / "out" / "sre.csv").read_text().splitlines()[0]
    assert first_line == f"# config_sha256={config_hash(FREE_SRE)}"


FREE_SWEEP = """\
mode=sweep
N=1
J=0
mu=1.0
beta=1.0
beta_grid=0.5,1,2
M=8
"""


def test_sweep_writes_profiles_and_commensurate_s2(tmp_path):
    outcome = run(parse_config(FREE_SWEEP), SETTINGS, config_text=FREE_SWEEP, out_dir=tmp_path)
    assert outcome.exit_code == EXIT_OK
    header = (tmp_path / "fig3b.csv").read_text().splitlines()[1]
    assert header == ",".join(PROFILE_COLUMNS)
    rows = read_rows(tmp_path / "fig3b.csv")
    assert len(rows) == 2 * 8 * 8
    assert {row["branch"] for row in rows} == {DISCONNECTED_SEED, CONNECTED_SEED}
    assert {float(row["beta"]) for row in rows} == {1.0}
    disconnected = [float(r["g11_LL"]) for r in rows if r["branch"] == DISCONNECTED_SEED]
    connected = [float(r["g11_LL"]) for r in rows if r["branch"] == CONNECTED_SEED]
    np.testing.assert_allclose(disconnected, connected, atol=1e-8)

    s2 = {float(r["beta"]): float(r["s2_per_N"]) for r in read_rows(tmp_path / "fig4a.csv") if r["s2_per_N"]}
    for beta in (0.5, 1.0, 2.0):
        assert s2[beta] == pytest.approx(2 * log_2cosh(beta / 2) - log_2cosh(beta), abs=1e-10)


def test_unexpected_failure_still_writes_manifest(tmp_path, monkeypatch):
    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr(cli_io, "iterate_sre", singular)
    outcome = run(parse_config(FREE_SRE), SETTINGS, config_text=FREE_SRE, out_dir=tmp_path)
    assert outcome.exit_code == EXIT_PARTIAL
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "status=failed" in manifest
    assert "exit_code=1" in manifest
    assert "error=LinAlgError: Singular matrix" in manifest
