import json
import subprocess
import sys

import numpy as np
import pytest

from bdkit.cli_io import (
    MODEL_KEYS,
    PRESET_NAMES,
    format_value,
    load_presets,
    main,
    parse_config,
    preset_text,
    read_csv,
    run,
    trajectory_from_csv,
)
from bdkit.errors import ConfigError

BASE = """\
coag.kind = power
coag.a = 1
coag.alpha = 0.5
frag.kind = power   # comment after a value
frag.a = 1
frag.alpha = 0.6666666666666666
lambda = 10
n = 64
scheme = rk4
dt = 0.01
T = 1
"""


def test_parse_minimal():
    cfg = parse_config(BASE)
    assert cfg.n == 64 and cfg.scheme == "rk4" and cfg.lam == 10.0
    assert cfg.frag == ("power", {"a": 1.0, "alpha": 2.0 / 3.0})
    assert cfg.source["lambda"] == 7


def test_all_errors_reported_with_lines():
    text = BASE.replace("n = 64", "n = 6.5").replace("dt = 0.01", "dt = 0.01\nbogus = 1\nT = 5")
    with pytest.raises(ConfigError) as info:
        parse_config(text.replace("lambda = 10\n", ""))
    errs = info.value.errors
    msgs = " | ".join(m for _, m in errs)
    assert "unknown key 'bogus'" in msgs
    assert "missing required key 'lambda'" in msgs
    assert any(ln == 7 and "n:" in m for ln, m in errs)
    dup = [m for _, m in errs if "duplicate" in m]
    assert dup and "line 11" in dup[0] and "line 12" in dup[0]


def test_rule_params_and_scheme_checks():
    with pytest.raises(ConfigError) as info:
        parse_config(BASE.replace("coag.alpha = 0.5\n", "coag.beta = 1\n").replace("rk4", "rd"))
    msgs = " | ".join(m for _, m in info.value.errors)
    assert "coag.alpha" in msgs and "coag.beta does not apply" in msgs and "mesh.dx_max" in msgs


def test_model_only_requirements():
    cfg = parse_config("\n".join(BASE.splitlines()[:7]), required=MODEL_KEYS)
    assert cfg.model().lam == 10.0


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_parse(name):
    cfg = parse_config(preset_text(name))
    assert cfg.scheme == "rd" and cfg.n == 30000 and cfg.dx_max == 50
    assert set(load_presets()) == set(PRESET_NAMES)


def test_float_format_round_trips():
    for v in (1 / 3, 1e-300, 2.0**60 + 1, np.pi):
        assert float(format_value(v)) == v
    assert format_value(True) == "true" and format_value(3) == "3"


def test_run_writes_csv(tmp_path):
    out = tmp_path / "traj.csv"
    cfg = parse_config(BASE + "observe = c1, moments, profile\nstride = 10\n")
    rep = run(cfg, out=str(out))
    assert rep.steps == 100 and rep.K == 64 and rep.wall_seconds > 0
    header, data = read_csv(out)
    assert header[:4] == ["t", "C1", "M0", "M1"] and header[-1] == "C_64"
    assert data.shape == (11, 4 + 64)
    tr = trajectory_from_csv(out)
    np.testing.assert_array_equal(tr.data["profile"][-1], rep.trajectory.data["profile"][-1])


def test_rd_run_header_on_mesh(tmp_path):
    out = tmp_path / "rd.csv"
    cfg = parse_config(BASE.replace("rk4", "rd").replace("n = 64", "n = 500") + "mesh.dx_max = 8\nobserve = profile, error\n")
    rep = run(cfg, out=str(out))
    header, _ = read_csv(out)
    assert rep.K < 500 and header[1] == "error" and len(header) == 2 + rep.K


def test_cli_equilibrium(capsys):
    assert main(["--quiet", "--preset", "affine_frag", "equilibrium"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "lambda,z,z_s,lambda_s,regime,uniqueness"
    row = lines[1].split(",")
    assert float(row[1]) == pytest.approx(0.5150679356089982, rel=1e-10)
    assert float(row[2]) == 0.75 and row[4] == "subcritical"


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("coag.kind = power\nfoo = 1\n")
    assert main(["--config", str(cfg), "simulate-ode"]) == 2
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "ConfigError"
    assert {"line": 2, "message": "unknown key 'foo'"} in payload["problems"]


def test_cli_runtime_error_exit_code(capsys):
    assert main(["--quiet", "--preset", "affine_frag", "equilibrium", "--lambda", "30"]) == 0
    assert "supercritical" in capsys.readouterr().out
    assert main(["--quiet", "--preset", "pow_frag", "simulate-ode", "--n", "64", "--dt", "10", "--T", "100"]) == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "StepSizeError"


def test_cli_simulate_check_bounds_and_compare(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg = tmp_path / "run.cfg"
    cfg.write_text(BASE.replace("coag.a = 1", "coag.a = 1").replace("frag.kind = power   # comment after a value\nfrag.a = 1\nfrag.alpha = 0.6666666666666666", "frag.kind = affine\nfrag.c = 1\nfrag.d = 1\nfrag.beta = 1").replace("lambda = 10", "lambda = 0.5"))
    assert main(["--quiet", "--config", str(cfg), "--out", str(a), "simulate-ode", "--observe", "profile", "--stride", "10"]) == 0
    assert main(["--quiet", "--config", str(cfg), "--out", str(b), "simulate-ode", "--observe", "profile", "--stride", "10"]) == 0
    assert main(["--quiet", "--config", str(cfg), "check-bounds", "--trajectory", str(a)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "bound,value,max_violation,verdict"
    verdicts = {r.split(",")[0]: r.split(",")[-1] for r in out[1:]}
    assert verdicts["kappa"] == "ok" and verdicts["mass"] == "ok" and verdicts["xi1"] == "ok"
    assert main(["--quiet", "compare", str(a), str(b)]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert all(float(r.split(",")[2]) == 0.0 for r in rows)


def test_cli_mesh_and_spectral(capsys):
    assert main(["--quiet", "mesh", "--n", "30000", "--dx-max", "50"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "j,n_j,dx_half" and len(lines) == 650 and lines[-1] == "649,30000,"
    assert main(["--quiet", "--preset", "pow_frag", "spectral-check", "--N", "64"]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header == "z,D,p_norm,condition_lhs,satisfied,mu_est"
    assert float(row.split(",")[0]) == pytest.approx(1.1186750502727731, rel=1e-10)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bdkit", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "reproduce-figures" in proc.stdout
