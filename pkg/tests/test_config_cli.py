import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vvlab.cli import run_command
from vvlab.config import parse_config, validate_config
from vvlab.errors import ConfigError


def test_minimal_config_gets_defaults():
    cfg = parse_config("{}")
    assert cfg.grid_n == 128
    assert cfg.dim == 2
    assert cfg.epsilon_ladder[0] == 1e-2
    assert cfg.snapshot_times == (0.25, 0.5, 1.0)
    assert cfg.master_seed >= 0
    assert cfg.field["name"] == "cellular"


def test_negative_epsilon_names_the_path():
    raw = {"epsilon_ladder": [1e-2, 1e-3, -1e-4]}
    with pytest.raises(ConfigError, match=r"epsilon_ladder\[2\]"):
        validate_config(raw)


def test_nonmonotone_ladder_rejected():
    with pytest.raises(ConfigError, match=r"epsilon_ladder\[1\]"):
        validate_config({"epsilon_ladder": [1e-3, 1e-2]})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        validate_config({"grdi_n": 64})


def test_unknown_field_name_rejected():
    with pytest.raises(ConfigError, match="field.name"):
        validate_config({"field": {"name": "abc_flow"}})


def test_bad_snapshot_time_rejected():
    with pytest.raises(ConfigError, match=r"snapshot_times\[0\]"):
        validate_config({"t_final": 1.0, "snapshot_times": [2.0]})


def test_canonical_roundtrip_fixed():
    cfg = parse_config(json.dumps({"grid_n": 64, "master_seed": 7}))
    again = parse_config(cfg.canonical_json())
    assert again == cfg


@given(
    grid_n=st.sampled_from([16, 32, 64, 128, 256]),
    n_ladder=st.integers(1, 6),
    seed=st.integers(0, 2**62),
    t_final=st.floats(0.1, 4.0),
    threads=st.integers(1, 8),
)
@settings(max_examples=100, deadline=None)
def test_canonical_roundtrip_random(grid_n, n_ladder, seed, t_final, threads):
    ladder = [10.0 ** (-1 - 0.5 * i) for i in range(n_ladder)]
    raw = {
        "grid_n": grid_n,
        "epsilon_ladder": ladder,
        "master_seed": seed,
        "t_final": t_final,
        "dt": t_final / 100,
        "threads": threads,
    }
    cfg = validate_config(raw)
    assert parse_config(cfg.canonical_json()) == cfg


def test_seed_generated_and_persisted():
    c1 = parse_config("{}")
    c2 = parse_config(c1.canonical_json())
    assert c2.master_seed == c1.master_seed


# -------------------------------------------------------------------- CLI

def _base_config(tmp_path, **overrides):
    raw = {
        "field": {"name": "cellular", "params": {}},
        "grid_n": 32,
        "t_final": 0.25,
        "dt": 5e-3,
        "snapshot_times": [0.125, 0.25],
        "epsilon_ladder": [1e-2, 3e-3, 1e-3, 3e-4],
        "mc_samples": 50,
        "cloud_particles": 64,
        "master_seed": 11,
        "output_dir": str(tmp_path / "out"),
    }
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def test_cli_unknown_subcommand_exits_1(tmp_path, capsys):
    status = run_command(["frobnicate"])
    assert status == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_cli_field_list(capsys):
    status = run_command(["field", "list"])
    assert status == 0
    out = capsys.readouterr().out
    assert "cellular" in out and "rough" in out


def test_cli_invalid_config_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"epsilon_ladder": [-1.0]}))
    status = run_command(["--config", str(path), "solve"])
    assert status == 1
    assert "epsilon_ladder[0]" in capsys.readouterr().err


def test_cli_converge_end_to_end(tmp_path):
    cfg_path = _base_config(tmp_path)
    status = run_command(["--config", str(cfg_path), "converge"])
    assert status == 0
    outdir = tmp_path / "out"
    agg = outdir / "selection_sweep.csv"
    assert agg.exists()
    rows = agg.read_text().strip().splitlines()
    assert len(rows) == 1 + 4  # header + one row per ladder point
    assert (outdir / "rate_fits.json").exists()
    assert (outdir / "experiment.json").exists()
    assert (outdir / "config.canonical.json").exists()
    # reproducibility metadata carries the seed
    meta = json.loads((outdir / "experiment.json").read_text())
    assert meta["master_seed"] == 11


def test_cli_writes_only_inside_outdir(tmp_path, monkeypatch):
    workdir = tmp_path / "cwd"
    workdir.mkdir()
    monkeypatch.chdir(workdir)
    cfg_path = _base_config(tmp_path, epsilon_ladder=[1e-2, 3e-3, 1e-3, 3e-4])
    before = set(workdir.iterdir())
    status = run_command(["--config", str(cfg_path), "dissipation"])
    assert status == 0
    assert set(workdir.iterdir()) == before
    assert (tmp_path / "out" / "dissipation.csv").exists()


def test_cli_analysis_selftest(tmp_path):
    status = run_command(["--out", str(tmp_path / "sf"), "analysis", "selftest"])
    assert status == 0
    report = json.loads((tmp_path / "sf" / "analysis_selftest.json").read_text())
    assert report["weak_le_strong"] is True
    assert report["interpolation"] is True
    assert report["decompose_bitwise"] is True


def test_cli_solve_and_fk(tmp_path):
    cfg_path = _base_config(tmp_path, mc_samples=40, fk_probes=4)
    assert run_command(["--config", str(cfg_path), "solve", "--epsilon", "1e-3"]) == 0
    rep = json.loads((tmp_path / "out" / "solve_report.json").read_text())
    assert rep["energy_identity_residual"] <= 1e-5
    assert run_command(["--config", str(cfg_path), "fk", "--epsilon", "1e-3"]) == 0
    fk = json.loads((tmp_path / "out" / "feynman_kac.json").read_text())
    assert len(fk["values"]) == 4


def test_cli_flow_and_duality_and_stability(tmp_path):
    cfg_path = _base_config(tmp_path, cloud_particles=400, bins_per_axis=2)
    assert run_command(["--config", str(cfg_path), "flow", "--t1", "0.25"]) == 0
    meta = json.loads((tmp_path / "out" / "flowmap.json").read_text())
    assert meta["particles"] == 400
    assert "measure_preservation_defect" in meta

    assert run_command(["--config", str(cfg_path), "stability", "--eps1", "1e-3"]) == 0
    stab = json.loads((tmp_path / "out" / "viscosity_stability.json").read_text())
    assert len(stab["rows"]) == 4

    assert run_command(["--config", str(cfg_path), "duality"]) == 0
    dual = json.loads((tmp_path / "out" / "duality.json").read_text())
    assert dual["residual"] >= 0.0


def test_cli_env_override(tmp_path, monkeypatch):
    cfg_path = _base_config(tmp_path)
    monkeypatch.setenv("VVLAB_GRID_N", "16")
    monkeypatch.setenv("VVLAB_MASTER_SEED", "99")
    assert run_command(["--config", str(cfg_path), "field", "sample"]) == 0
    echoed = json.loads((tmp_path / "out" / "config.canonical.json").read_text())
    assert echoed["grid_n"] == 16
    assert echoed["master_seed"] == 99


def test_cli_numerical_abort_exit_2(tmp_path, capsys):
    # CFL violation is a precondition -> 1, not 2
    cfg_path = _base_config(tmp_path, dt=0.2, t_final=1.0,
                            snapshot_times=[1.0])
    status = run_command(["--config", str(cfg_path), "solve"])
    assert status == 1
    assert "CFL" in capsys.readouterr().err
