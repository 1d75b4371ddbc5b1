import json
import os

import numpy as np
import pytest

from ietflow import adic, cli
from ietflow.cli import ExperimentConfig, main
from ietflow.errors import ValidationError


def _config_dict(tmp_path, **overrides):
    data = {
        "perm": [4, 3, 2, 1],
        "seed": 4242,
        "depth": 700,
        "samples": 200,
        "s_grid": [3.0, 4.0],
        "tau_grid": [0.5, 1.0],
        "N_grid": [100, 1000, 10000],
        "output_dir": str(tmp_path / "out"),
    }
    data.update(overrides)
    return data


def _write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(_config_dict(tmp_path, **overrides)))
    return str(path)


def test_config_rejects_unknown_fields(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(_config_dict(tmp_path, wibble=3))


def test_config_requires_perm_and_seed(tmp_path):
    data = _config_dict(tmp_path)
    del data["perm"]
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(data)
    data = _config_dict(tmp_path)
    del data["seed"]
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(data)


def test_config_rejects_bad_seed_and_grids(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(_config_dict(tmp_path, seed="not-an-int"))
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(_config_dict(tmp_path, N_grid=[]))
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(_config_dict(tmp_path, s_grid=[4.0, 3.0]))


def test_main_exit_1_on_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"perm": [4, 3, 2, 1]}))  # missing seed
    assert main(["spectrum", "--config", str(path)]) == 1
    assert "config error" in capsys.readouterr().err


def test_main_exit_1_on_missing_config_file(tmp_path, capsys):
    assert main(["spectrum", "--config", str(tmp_path / "nope.json")]) == 1


def test_verify_passes_and_is_deterministic(tmp_path, capsys):
    cfg_path = _write_config(tmp_path, output_dir=str(tmp_path / "a"))
    assert main(["verify", "--config", cfg_path, "--quick"]) == 0
    cfg_path2 = _write_config(tmp_path, output_dir=str(tmp_path / "b"))
    assert main(["verify", "--config", cfg_path2, "--quick"]) == 0
    a = (tmp_path / "a" / "verify" / "verify.json").read_bytes()
    b = (tmp_path / "b" / "verify" / "verify.json").read_bytes()
    assert a == b


def test_spectrum_deterministic_and_m2(tmp_path):
    cfg_path = _write_config(
        tmp_path, perm=[2, 1], depth=4000, output_dir=str(tmp_path / "s1")
    )
    assert main(["spectrum", "--config", cfg_path]) == 0
    cfg_path2 = _write_config(
        tmp_path, perm=[2, 1], depth=4000, output_dir=str(tmp_path / "s2")
    )
    assert main(["spectrum", "--config", cfg_path2]) == 0
    r1 = (tmp_path / "s1" / "spectrum" / "report.json").read_text()
    r2 = (tmp_path / "s2" / "spectrum" / "report.json").read_text()
    assert r1.split("\n", 1)[1] == r2.split("\n", 1)[1]
    report = json.loads(r1.split("\n", 1)[1])
    np.testing.assert_allclose(report["exponents"], [1.0, -1.0], atol=0.05)


def test_seed_override_changes_hash(tmp_path):
    cfg_path = _write_config(tmp_path)
    cfg = ExperimentConfig.from_file(cfg_path)
    data = json.loads(cfg.canonical_json())
    data["seed"] = cfg.seed + 1
    cfg2 = ExperimentConfig.from_dict(data)
    assert cfg.config_hash() != cfg2.config_hash()


def test_verify_mutation_detected(tmp_path, monkeypatch):
    """Test-of-tests: an injected adjacency-transpose bug must fail verify."""
    real = adic.graph_of_move

    def swapped(move):
        g = real(move)
        flipped = [adic.Edge(e.id, e.final, e.initial) for e in g.edges]
        return adic._build_graph(g.m, [(e.initial, e.final) for e in flipped])

    monkeypatch.setattr(adic, "graph_of_move", swapped)
    adic._CODING_CACHE.clear()
    cfg_path = _write_config(tmp_path, output_dir=str(tmp_path / "mut"))
    try:
        code = main(["verify", "--config", cfg_path, "--quick"])
    finally:
        adic._CODING_CACHE.clear()
    assert code == 2


def test_deviation_writes_artifacts(tmp_path):
    cfg_path = _write_config(tmp_path, depth=700)
    assert main(["deviation", "--config", cfg_path]) == 0
    out = tmp_path / "out" / "deviation"
    header, payload = (out / "summary.json").read_text().split("\n", 1)
    assert header.startswith("# ietflow")
    summary = json.loads(payload)
    assert summary["slope_of_one"] == pytest.approx(1.0, abs=0.02)
    assert len(summary["rows"]) == 5
    for row in summary["rows"]:
        assert abs(row["c2"]) >= 0.4
        assert abs(row["c1"]) < 1e-9
    assert (out / "regression.csv").exists()


def test_limit_and_variance_write_artifacts(tmp_path):
    cfg_path = _write_config(tmp_path, samples=300)
    assert main(["limit", "--config", cfg_path]) == 0
    assert main(["variance", "--config", cfg_path]) == 0
    ks_lines = (tmp_path / "out" / "limit" / "ks.csv").read_text().strip().split("\n")
    assert ks_lines[1].startswith("s,")
    var_lines = (tmp_path / "out" / "variance" / "table.csv").read_text().strip().split("\n")
    assert var_lines[1] == "s,var_integral,H2,var_cocycle,prediction,ratio"
    # byte-identical rerun
    before = (tmp_path / "out" / "limit" / "ks.csv").read_bytes()
    assert main(["limit", "--config", cfg_path]) == 0
    assert (tmp_path / "out" / "limit" / "ks.csv").read_bytes() == before
