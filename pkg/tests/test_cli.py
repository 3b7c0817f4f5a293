import json
import subprocess
import sys

import pytest

from xjunction import cli


def run(tmp_path, command, cfg=None, *extra):
    args = [command, "--out", str(tmp_path / "out")]
    if cfg is not None:
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps(cfg))
        args += ["--config", str(f)]
    return cli.main(args + list(extra))


def test_unknown_key_rejected(tmp_path, capsys):
    assert run(tmp_path, "analyze", {"analysis": {"strateg": "min-pp"}}) == cli.EXIT_CONFIG
    assert "analysis.strateg" in capsys.readouterr().err


def test_negative_weight_rejected(tmp_path, capsys):
    assert run(tmp_path, "optimize", {"optimizer": {"weights": [-1, 1]}}) == cli.EXIT_CONFIG
    assert "non-negative" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [{"analysis": {"strategy": "zigzag"}}, {"threads": "two"},
                                 {"dynamics": {"step_fraction": 0.1}}, [1, 2]])
def test_invalid_configs(tmp_path, cfg):
    assert run(tmp_path, "analyze", cfg) == cli.EXIT_CONFIG


def test_analyze_empty_range_writes_header(tmp_path):
    assert run(tmp_path, "analyze", {"analysis": {"axial_range": [5, 0]}}) == 0
    text = (tmp_path / "out" / "path_fixed-height_R.csv").read_text()
    assert text.strip().startswith("x,y,z,phi_pp_meV")
    assert len(text.strip().splitlines()) == 1


def test_analyze_is_deterministic_and_config_round_trips(tmp_path):
    cfg = {"analysis": {"strategy": "min-pp", "axial_range": [0, 40], "step": 10}}
    assert run(tmp_path, "analyze", cfg) == 0
    out = tmp_path / "out"
    first = (out / "path_min-pp_R.csv").read_bytes()
    effective = out / "analyze_config.json"
    again = tmp_path / "again"
    assert cli.main(["analyze", "--config", str(effective), "--out", str(again)]) == 0
    assert (again / "path_min-pp_R.csv").read_bytes() == first
    a = json.loads(effective.read_text())
    b = json.loads((again / "analyze_config.json").read_text())
    a.pop("out"), b.pop("out")
    assert a == b


def test_single_point_waveform_is_a_static_well(tmp_path):
    cfg = {"waveform": {"points": [[0.0, 300.0, 51.0]]}}
    assert run(tmp_path, "waveform", cfg) == 0
    summary = json.loads((tmp_path / "out" / "static_wells.json").read_text())
    assert summary["residuals_ok"] and summary["steps"] == 1


def test_infeasible_waveform_exit_code(tmp_path, capsys):
    cfg = {"waveform": {"start": [0, 400, 50], "end": [0, 380, 50], "steps": 3,
                        "bounds": [-0.001, 0.001]}}
    assert run(tmp_path, "waveform", cfg) == cli.EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err


def test_optimize_single_seed(tmp_path, capsys):
    cfg = {"optimizer": {"max_evaluations": 20}}
    assert run(tmp_path, "optimize", cfg, "--seeds", "1") == 0
    rep = json.loads((tmp_path / "out" / "optimize_report.json").read_text())
    assert [s["seed"] for s in rep["seeds"]] == [0]
    assert (tmp_path / "out" / "best_geometry.json").exists()
    assert "ratio to h" in capsys.readouterr().out


def test_export_geometry_and_reload(tmp_path):
    assert run(tmp_path, "export-geometry") == 0
    cfg = {"geometry": {"kind": "file", "file": str(tmp_path / "out" / "layout.json"),
                        "segment": False}, "analysis": {"axial_range": [0, 10], "step": 10}}
    assert run(tmp_path, "analyze", cfg) == 0


def test_tilt_command(tmp_path):
    assert run(tmp_path, "tilt") == 0
    res = json.loads((tmp_path / "out" / "tilt.json").read_text())
    assert 0.3 < res["splitting_mhz"] < 1.0


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "xjunction.cli", "analyze", "--config",
                        str(tmp_path / "missing.json")], capture_output=True, text=True)
    assert r.returncode == cli.EXIT_CONFIG and "cannot read config" in r.stderr
