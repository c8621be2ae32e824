import json
from pathlib import Path

import numpy as np
import pytest

from dcbo.cli import main
from dcbo.config import ExperimentConfig, parse_text, render
from dcbo.exceptions import ConfigError
from dcbo.tasks import read_csv

MINIMAL = """\
task = run
objective = sphere_plus_one   # builtin
dim = 2
model = ModelC
lambda = 1
sigma = 1
h = 0.1
beta = 50
N = 50
seed = 7
"""


def test_minimal_config_is_valid():
    cfg = parse_text(MINIMAL)
    assert (cfg.task, cfg.dim, cfg.n_particles, cfg.seed) == ("run", 2, 50, 7)
    assert cfg.warnings == ()
    assert cfg.build_scheme().gamma == pytest.approx(0.09516258196404048)


def test_h_zero_rejected_with_field():
    with pytest.raises(ConfigError, match="h must be positive") as info:
        parse_text(MINIMAL.replace("h = 0.1", "h = 0"))
    assert info.value.field == "h" and info.value.line == 7


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_text(MINIMAL + "colour = blue\n")
    assert info.value.line == 11 and info.value.field == "colour"


def test_parse_errors():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("task = run\nno equals sign\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("dim = 2\ndim = 3\n")
    with pytest.raises(ConfigError) as info:
        parse_text("beta = lots\n")
    assert info.value.field == "beta" and info.value.line == 1
    with pytest.raises(ConfigError, match="epsilon"):
        parse_text("epsilon = 1\n")
    with pytest.raises(ConfigError, match="gamma"):
        parse_text("model = GenericGaussian\n")


def test_unstable_model_a_accepted_with_warning():
    cfg = parse_text("model = ModelA\nlambda = 1\nsigma = 1\nh = 1.2\n")
    assert len(cfg.warnings) == 1 and "not L2-stable" in cfg.warnings[0]
    cfg = parse_text("model = ModelA\nlambda = 1\nsigma = 1\nh = 1.0\n")
    assert cfg.warnings  # the boundary itself is not stable


def test_overrides_win_and_render_roundtrips():
    cfg = parse_text(MINIMAL, {"beta": "5", "N": "3"})
    assert cfg.beta == 5.0 and cfg.n_particles == 3
    again = parse_text(render(cfg))
    assert again == ExperimentConfig(**{**again.__dict__, "out": cfg.out, "workers": cfg.workers})


def test_sweep_points():
    cfg = parse_text("task = sweep\nsweep_beta = 1,2\nsweep_N = 3,4,5\n")
    pts = cfg.sweep_points()
    assert len(pts) == 6 and pts[0] == {"beta": 1.0, "N": 3.0}
    with pytest.raises(ConfigError):
        parse_text("task = sweep\n")


def _run(args, tmp_path, name="out"):
    out = tmp_path / name
    return main(args + ["--out", str(out)]), out


def test_cli_run_artifacts(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(MINIMAL)
    status, out = _run(["run", "--config", str(cfg), "--verify-replay"], tmp_path)
    assert status == 0
    assert "max_abs_error=" in capsys.readouterr().out
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "step,diameter,spread,mean_1,mean_2,consensus_1,consensus_2"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["consensus_reached"] is True
    assert {"limit_point", "steps", "L_limit_point"} <= set(summary)
    assert json.loads((out / "replay.json").read_text())["passed"]
    _, rows = read_csv(out / "trace.csv")
    assert rows[-1, 1] <= 1e-8 and len(rows) == summary["steps"] + 1


def test_cli_verify_replay_subcommand(tmp_path, capsys):
    status, out = _run(["run", "--dim", "2", "--N", "4", "--record-noise", "true",
                        "--max-steps", "50", "--model", "ModelA", "--h", "0.3"], tmp_path)
    assert status == 0
    assert main(["verify-replay", "--out", str(out)]) == 0
    err = float(capsys.readouterr().out.split("max_abs_error=")[1].split()[0])
    assert err <= 1e-10


def test_cli_verify_replay_without_noise(tmp_path):
    status, out = _run(["run", "--N", "3"], tmp_path)
    assert status == 0
    assert main(["verify-replay", "--out", str(out)]) == 2
    assert json.loads((out / "error.json").read_text())["error"] == "UsageError"


def test_cli_error_json(tmp_path):
    status, out = _run(["run", "--h", "0"], tmp_path)
    assert status == 2
    err = json.loads((out / "error.json").read_text())
    assert err["field"] == "h" and "h must be positive" in err["message"]
    assert err["schema_version"] == 1


def test_cli_module_error_exit_code(tmp_path):
    # an unstable run overflows the objective
    status, out = _run(["run", "--model", "GenericGaussian", "--gamma", "-3", "--zeta", "0",
                        "--N", "3", "--beta", "1"], tmp_path)
    assert status == 3
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "ObjectiveEvaluationError" and "step" in err


def test_cli_stability_grid(tmp_path):
    status, out = _run(["stability", "--model", "ModelA", "--sigma", "1"], tmp_path)
    assert status == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["boundary_within_grid_resolution"]
    _, rows = read_csv(out / "stability.csv")
    assert rows.shape == (2500, 6)
    lam, h, rate = rows[:, 0], rows[:, 1], rows[:, 4]
    boundary = (2 * lam - 1) / lam ** 2
    assert np.all((rate > 0) == (h < boundary))


def test_cli_moments(tmp_path):
    status, out = _run(["moments", "--model", "GenericGaussian", "--gamma", "0.5",
                        "--zeta", "0.6", "--replicas", "2000"], tmp_path)
    assert status == 0
    header, rows = read_csv(out / "moments.csv")
    assert header[:4] == ["n", "empirical_E_diff", "stderr_E_diff", "theory_E_diff"]
    assert rows.shape[0] == 31
    assert rows[5, 3] == pytest.approx(-(0.5 ** 5))


def test_cli_laplace_and_certify(tmp_path):
    status, out = _run(["laplace", "--objective", "quadratic_well", "--lower", "0", "--upper",
                        "1", "--betas", "25,100", "--samples", "20000"], tmp_path, "lap")
    assert status == 0
    header, rows = read_csv(out / "laplace.csv")
    assert header[0] == "beta" and rows.shape == (2, 7)
    status, out = _run(["certify", "--objective", "quadratic_well", "--lower", "0.4", "--upper",
                        "0.6", "--model", "ModelA", "--lambda", "1", "--sigma", "0.5", "--h",
                        "0.2", "--beta", "5", "--N", "2", "--replicas", "100", "--delta", "0.05",
                        "--empirical", "true", "--samples", "20000"], tmp_path, "cert")
    assert status == 0
    rec = json.loads((out / "certificate.json").read_text())
    assert rec["laplace_certificate"]["holds"] is True
    assert rec["sup_certificate"]["sup_condition"] is True
    assert rec["empirical"]["reliable"] is True


def test_cli_sweep_manifest_and_determinism(tmp_path):
    args = ["sweep", "--sweep-beta", "10,50", "--sweep-h", "0.1,0.2", "--dim", "2",
            "--replicas", "3", "--N", "6"]
    s1, a = _run(args + ["--workers", "3"], tmp_path, "a")
    s2, b = _run(args, tmp_path, "b")
    assert s1 == s2 == 0
    lines = (a / "manifest.csv").read_text().splitlines()
    assert lines[0] == "index,dir,beta,h,status" and len(lines) == 5
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
