import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from torus_pdo.cli import run_command
from torus_pdo.experiments import parametrix_experiment
from torus_pdo.harmonic import GridFunction, read_grid_function, write_grid_function
from torus_pdo.lattice import FrequencyBox
from torus_pdo.symbols import SymbolTable


def run(tmp_path, cfg, *extra, name="cfg.json", out="out"):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    return run_command(["--config", str(p), "--out", str(tmp_path / out), *extra])


def bump_csv(tmp_path):
    box = FrequencyBox(1, 32)
    u = GridFunction.from_function(lambda x: np.exp(-4 * np.sin(x[0] / 2) ** 2), box)
    write_grid_function(u, tmp_path / "bump.csv")
    return u


def test_evolve_translation(tmp_path):
    u = bump_csv(tmp_path)
    code = run(tmp_path, {"command": "evolve", "a1": "xi", "K": 32, "f": "bump.csv", "times": [0, 1]})
    assert code == 0
    moved = read_grid_function(tmp_path / "out" / "reference_t1.csv")
    x = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    want = np.exp(-4 * np.sin((x + 1) / 2) ** 2)
    assert np.max(np.abs(moved.sample(64) - want)) < 1e-10
    assert abs(moved.norm() - u.norm()) < 1e-12
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["exit_status"] == 0 and manifest["seed"] == 0
    assert set(manifest["inputs"]) == {"f", "config"}
    assert len(manifest["inputs"]["f"]["sha256"]) == 64
    assert "numpy" in manifest["versions"] and manifest["wall_time_s"] >= 0
    assert "reference_t1.csv" in manifest["artifacts"]


def test_parametrix_residual_csv(tmp_path):
    code = run(tmp_path, {"command": "parametrix", "symbol": "1+|xi|^2+exp(ix1)", "M": 4})
    assert code == 0
    with open(tmp_path / "out" / "residual_order.csv") as fh:
        rows = list(csv.DictReader(fh))
    slope = float(rows[0]["fitted_slope"])
    assert all(float(r["fitted_slope"]) == slope for r in rows)
    assert slope == json.loads((tmp_path / "out" / "report.json").read_text())["slope"]
    # the calculus module run directly on the same symbol
    box = FrequencyBox(1, 64 + 3, 4 + 4)
    a = SymbolTable.from_function(lambda x, k: 1 + k[0] ** 2 + np.exp(1j * x[0]), box, 32, m=2)
    oracle = parametrix_experiment(64, 4, 2.0, 0, [(2, a)])
    assert abs(slope - oracle.metrics["slope"]) < 1e-9


@pytest.mark.parametrize("text,key", [
    ('{"command": "evolve", "a1": "xi", ', "line"),
    ({"command": "evolve", "K": -3}, "/K"),
    ({"command": "evolve", "bogus": 1}, "/bogus"),
    ({"command": "evolve", "a1": "xi +", "f": "cos(x)"}, "/a1"),
    ({"command": "evolve", "a1": "xi", "f": "missing.csv"}, "/f"),
])
def test_usage_errors(tmp_path, capsys, text, key):
    assert run(tmp_path, text) == 2
    assert key in capsys.readouterr().err


def test_unknown_command_line(tmp_path):
    assert run_command(["frobnicate"]) == 2
    assert run_command([]) == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    cfg = {"command": "fso-apply", "K": 4, "phase": "x*xi/2", "amplitude": "1", "f": "cos(x)"}
    assert run(tmp_path, cfg) == 3
    assert "PhaseError" in capsys.readouterr().err
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert "PhaseError" in report["error"]
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["exit_status"] == 3


def test_deterministic_csv(tmp_path):
    cfg = {"command": "adjoint-check", "pairs": 3, "K": 8}
    assert run(tmp_path, cfg, "--seed", "7", out="a") == 0
    assert run(tmp_path, cfg, "--seed", "7", out="b") == 0
    a = sorted((tmp_path / "a").glob("*.csv"))
    assert a
    for p in a:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 7


def test_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("TORUS_PDO_THREADS", "3")
    cfg = {"command": "quantize-apply", "symbol": "xi", "f": "cos(x)", "K": 4}
    assert run(tmp_path, cfg, out="env") == 0
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["threads"] == 3
    assert run(tmp_path, cfg, "--threads", "2", out="flag") == 0
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["threads"] == 2
    assert run(tmp_path, cfg, "--threads", "0", out="bad") == 2
    monkeypatch.setenv("TORUS_PDO_THREADS", "many")
    assert run(tmp_path, cfg, out="bad2") == 2


def test_quantize_apply_derivative(tmp_path):
    cfg = {"command": "quantize-apply", "symbol": "xi", "f": "cos(x)", "K": 4}
    assert run(tmp_path, cfg) == 0
    r = read_grid_function(tmp_path / "out" / "result.csv")
    x = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    # xi(X, D) cos = -i d/dx cos = i sin
    assert np.max(np.abs(r.sample(16) - 1j * np.sin(x))) < 1e-14


def test_module_entry_point(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"command": "extract", "symbol": "exp(ix1)*xi", "K": 6}))
    res = subprocess.run([sys.executable, "-m", "torus_pdo", "--config", str(p), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["x_band"] == 1 and report["max_abs_error"] < 1e-12
