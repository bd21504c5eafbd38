import csv
import io
import json

import pytest
import yaml

from mrisk.cli import main
from mrisk.config import ConfigError, RunConfig
from mrisk.marginals import MarginalLaw
from mrisk.scalar_convex import abs_loss
from mrisk.threshold import delta_perfect_unreg


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_threshold_huber_is_infinite(capsys):
    code, out, _ = run(capsys, "threshold", "--loss", "huber", "--noise", "sparse:0.1")
    assert code == 0 and json.loads(out)["delta_perfect"] == "inf"


def test_threshold_json_matches_library(capsys):
    code, out, _ = run(capsys, "threshold", "--loss", "abs", "--noise", "sparse:0.1")
    assert code == 0
    assert json.loads(out) == json.loads(json.dumps(delta_perfect_unreg(abs_loss(), MarginalLaw.sparse(0.1))
                                                    .to_dict()))


def test_missing_noise_law_is_invalid_input(capsys):
    code, _, err = run(capsys, "threshold", "--loss", "abs")
    assert code == 2 and "noise" in err


def test_unknown_config_key_is_invalid_input(tmp_path, capsys):
    path = tmp_path / "run.yaml"
    path.write_text("loss: abs\nnoise: sparse:0.1\nbogus: 1\n")
    code, _, err = run(capsys, "threshold", "--config", str(path))
    assert code == 2 and "bogus" in err


def test_config_file_and_override(tmp_path, capsys):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"loss": "square", "noise": "normal", "delta": 3.0}))
    code, out, _ = run(capsys, "solve", "--config", str(path), "--set", "delta=2.0")
    sol = json.loads(out)
    assert code == 0 and sol["status"] == "Converged"
    assert sol["alpha"] == pytest.approx(1.0, abs=1e-5)


def test_solve_rejects_small_delta(capsys):
    code, _, _ = run(capsys, "solve", "--loss", "abs", "--noise", "sparse:0.1", "--delta", "0.8")
    assert code == 2


def test_risk_curve_columns(capsys):
    code, out, _ = run(capsys, "risk-curve", "--loss", "abs", "--reg", "abs", "--noise", "sparse:0.3",
                       "--signal", "sparse:0.1", "--delta", "1.2", "--set", "lambdas=[0.1, 1.0, 10.0]")
    rows = rows_of(out)
    assert code == 0 and [r["status"] for r in rows] == ["Converged", "AtZero", "Converged"]
    assert list(rows[0]) == ["lambda", "alpha", "status", "residual_max"]


def test_phase_diagram_single_cell(capsys):
    code, out, _ = run(capsys, "phase-diagram", "--loss", "abs", "--set", "s_grid=[0.3]", "--delta", "[2.0]",
                       "--set", "delta_relative=true", "--set", "experiment.replicates=20")
    rows = rows_of(out)
    assert code == 0 and len(rows) == 1
    assert float(rows[0]["empirical_recovery_freq"]) >= 0.9


def test_perfect_recovery_boundary_monotone(capsys):
    code, out, _ = run(capsys, "figures", "perfect-recovery", "--set", "s_grid=[0.1, 0.2, 0.3]",
                       "--delta", "[2.0]", "--set", "experiment.replicates=2")
    assert code == 0
    b = [float(r["predicted_boundary"]) for r in rows_of(out)]
    assert b == sorted(b) and b[0] < b[-1]


def test_risk_compare_single_delta(capsys):
    code, out, _ = run(capsys, "figures", "risk-compare", "--delta", "1.75")
    rows = {r["loss"]: r for r in rows_of(out)}
    assert code == 0 and len(rows) == 2
    assert float(rows["Huber"]["alpha_sq_theory"]) > 0
    assert float(rows["L1"]["alpha_sq_theory"]) == 0.0


def test_simulate_columns(capsys):
    code, out, _ = run(capsys, "simulate", "--loss", "abs", "--noise", "sparse:0.1", "--delta", "2.0",
                       "--set", "experiment.p=30", "--set", "experiment.replicates=3")
    rows = rows_of(out)
    assert code == 0 and len(rows) == 3 and rows[0]["recovered"] == "true"


def test_statdim_command(capsys):
    code, out, _ = run(capsys, "statdim", "--loss", "abs", "--noise", "point:0", "-m", "50", "--samples", "5")
    assert code == 0 and json.loads(out)["statdim_fraction"] == pytest.approx(1.0)


def test_reruns_are_byte_identical(tmp_path, capsys):
    argv = ["simulate", "--loss", "huber", "--noise", "sparse:0.2:cauchy", "--delta", "[1.5, 2.0]",
            "--set", "experiment.p=40", "--set", "experiment.replicates=4", "--seed", "7"]
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.csv"
        assert main(argv + ["--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] and outs[0]


def test_figure_svg_is_reproducible(tmp_path, capsys):
    svgs = []
    for k in range(2):
        path = tmp_path / f"fig{k}.svg"
        code, _, _ = run(capsys, "figures", "reg-threshold", "--set", "s_grid=[0.1, 0.5]",
                         "--set", "t_grid=[0.3]", "--svg", str(path))
        assert code == 0
        svgs.append(path.read_bytes())
    assert svgs[0] == svgs[1] and b"<svg" in svgs[0]


def test_run_config_round_trip():
    cfg = RunConfig.from_dict({"loss": "abs", "noise": "sparse:0.1", "delta": 2.0, "engine": {"gh_nodes": 81}})
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.engine["mc_samples"] == cfg.engine["mc_samples"]
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"engine": {"gh_nodez": 3}})
