import json

import numpy as np
import pytest

from carleman_scatter import cli, pipeline
from carleman_scatter.basis import AngularGrid, build_basis
from carleman_scatter.forward import BoundaryDataset, incident_wave, read_dataset, write_dataset
from carleman_scatter.grid import SpatialGrid
from carleman_scatter.pipeline import (ConfigError, RunConfig, StageError, cmd_choose_n, cmd_full, cmd_gen_data,
                                       cmd_metrics, cmd_reconstruct, config_from_dict, load_config, sha256)

SMALL = {"n": 13, "n_theta": 16, "N": 3, "P": 2, "n_max": 10}


def small(tmp_path, **kw):
    return config_from_dict({**SMALL, "out": str(tmp_path / "run"), **kw})


def test_defaults_carry_the_weight_parameters():
    cfg = RunConfig()
    assert cfg.x0 == (0.0, -10.0) and cfg.beta == 20.0 and cfg.lam == 6.0
    assert np.isclose(cfg.epsilon, 10**-5.5)
    assert cfg.data_n == 2 * cfg.n - 1


def test_config_round_trip(tmp_path):
    cfg = config_from_dict({"N": "auto", "delta": 0.05, "lambda": 3.0, "x0": [2, 0], "neumann_weight": 7.5})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_json()))
    back = load_config(path)
    assert back == cfg
    assert back.to_json() == cfg.to_json()


@pytest.mark.parametrize("bad", [{"bogus": 1}, {"n": 0}, {"x0": [0.5, 0.5]}, {"k": -1.0}, {"N": "many"},
                                 {"phantom": "test9"}, {"init_mode": "warm"}, {"seed": -1}, {"delta": -0.1},
                                 {"n": 13, "n_data": 20}])
def test_invalid_config_rejected(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_profiles_and_precedence(tmp_path):
    paper = config_from_dict({}, "paper")
    assert (paper.n, paper.n_theta, paper.N, paper.P) == (64, 150, 42, 10)
    assert np.isclose(paper.k, 3 * np.pi)
    assert np.isclose(config_from_dict({"phantom": "test4"}, "paper").k, 4 * np.pi)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 4, "n": 20}))
    cfg = load_config(path, "paper", {"seed": 9, "out": None})
    assert cfg.seed == 9 and cfg.n == 20 and cfg.n_theta == 150
    with pytest.raises(ConfigError):
        config_from_dict({}, "huge")


def test_gen_data_is_byte_identical(tmp_path):
    a = cmd_gen_data(small(tmp_path / "a", delta=0.0))
    b = cmd_gen_data(small(tmp_path / "b", delta=0.0))
    for name in ("header.json", "f.csv", "g.csv"):
        assert (tmp_path / "a/run/data" / name).read_bytes() == (tmp_path / "b/run/data" / name).read_bytes()
    assert a.summary["manifest"] == b.summary["manifest"]


def test_noise_metadata_recorded(tmp_path):
    cmd_gen_data(small(tmp_path, delta=0.1, seed=77))
    header = json.loads((tmp_path / "run/data/header.json").read_text())
    assert header["delta"] == 0.1 and header["seed"] == 77 and header["noise_applied"] is True


def test_homogeneous_data_is_incident_wave(tmp_path):
    cfg = small(tmp_path, phantom="homogeneous", delta=0.0)
    cmd_gen_data(cfg)
    data = read_dataset(tmp_path / "run/data")
    u_inc = incident_wave(data.grid.boundary_xy, cfg.k, data.angular.thetas).T
    assert np.abs(data.f - u_inc).max() <= 1e-10


def test_full_run_artifacts_and_manifest(tmp_path):
    cfg = small(tmp_path, save_iterates=True)
    res = cmd_full(cfg)
    root = tmp_path / "run"
    for name in ("summary.json", "metrics.json", "convergence.csv", "c_comp.csv", "c_true.csv",
                 "data/f.csv", "iterates/v_p2_m3.csv"):
        assert (root / name).exists(), name
    summary = json.loads((root / "summary.json").read_text())
    assert set(summary) >= {"config", "basis", "convergence", "metrics", "timings", "manifest"}
    for rel, digest in summary["manifest"].items():
        assert sha256(root / rel) == digest
    assert len(summary["convergence"]["diffs"]) == cfg.P
    rows = (root / "convergence.csv").read_text().splitlines()
    assert rows[0] == "p,diff" and len(rows) == cfg.P + 1
    assert res.summary["metrics"]["l2_rel"] >= 0
    again = cmd_metrics(cfg)
    assert pipeline._clean(again.summary["metrics"]) == summary["metrics"]


def test_rerun_identical_except_timings(tmp_path):
    cfg = small(tmp_path)
    first = cmd_full(cfg).summary
    second = cmd_full(cfg).summary
    first.pop("timings"), second.pop("timings")
    assert json.dumps(pipeline._clean(first), sort_keys=True) == json.dumps(pipeline._clean(second), sort_keys=True)


def test_auto_cutoff_on_band_limited_data(tmp_path):
    g, ang = SpatialGrid(13), AngularGrid(200, "gregory", 8)
    basis = build_basis(12, 4096, ang)
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal((len(g.boundary_ij), 6)) + 1j * rng.standard_normal((len(g.boundary_ij), 6))
    f = coeffs @ basis.psi[:6]
    write_dataset(BoundaryDataset(f=f, g=np.ones_like(f), k=2 * np.pi, grid=g, angular=ang), tmp_path / "bl")
    cfg = small(tmp_path, n_theta=200, N="auto", n_max=12, P=1)
    chosen = cmd_choose_n(cfg, tmp_path / "bl")
    assert chosen.summary["selected_N"] == 6
    assert (tmp_path / "run/eN.csv").exists()
    rec = cmd_reconstruct(cfg, tmp_path / "bl")
    assert rec.summary["selected_N"] == 6 and rec.summary["basis"]["N"] == 6


def test_dataset_mismatch_is_config_error(tmp_path):
    cmd_gen_data(small(tmp_path))
    with pytest.raises(ConfigError):
        cmd_reconstruct(small(tmp_path, n_theta=20))
    with pytest.raises(ConfigError):
        cmd_reconstruct(small(tmp_path / "elsewhere"))


def test_abort_removes_partial_artifacts(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise np.linalg.LinAlgError("synthetic breakdown")

    monkeypatch.setattr(pipeline, "run_contraction", broken)
    cfg = small(tmp_path)
    with pytest.raises(StageError) as info:
        cmd_full(cfg)
    assert info.value.stage == "contraction"
    assert not (tmp_path / "run").exists()


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "out": str(tmp_path / "cli")}))
    assert cli.main(["full", "--config", str(cfg), "--seed", "5"]) == 0
    out = capsys.readouterr().out
    assert '"l2_rel"' in out and "summary.json" in out
    assert json.loads((tmp_path / "cli/summary.json").read_text())["config"]["seed"] == 5
    assert cli.main(["choose-n", "--config", str(cfg)]) == 0
    assert "selected N =" in capsys.readouterr().out

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"wavenumber": 3}))
    assert cli.main(["gen-data", "--config", str(bad)]) == 2
    assert "unknown config keys" in capsys.readouterr().err
    assert cli.main(["gen-data", "--seed", "-3"]) == 2
    assert cli.main(["explode"]) == 2

    def broken(*args, **kwargs):
        raise pipeline.ForwardError("singular Helmholtz system")

    monkeypatch.setattr(pipeline, "generate_dataset", broken)
    cfg.write_text(json.dumps({**SMALL, "out": str(tmp_path / "cli2")}))
    assert cli.main(["gen-data", "--config", str(cfg)]) == 3
    assert "numerical failure in stage forward" in capsys.readouterr().err
    assert not (tmp_path / "cli2").exists()
