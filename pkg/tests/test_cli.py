import json
import math

import numpy as np
import pytest

from trailer_mpc.cli import main
from trailer_mpc.paths import NominalPath


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_path_straight(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["path", "--straight", "40", "--reverse", "--out", str(out)]) == 0
    path = NominalPath.read_csv(out)
    assert path.direction == -1.0
    assert path.s_end == pytest.approx(40.0)


def test_path_eight_infeasible_radius(tmp_path, capsys):
    out = tmp_path / "p.csv"
    code = main(["path", "--eight", "3", "--out", str(out)])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_design_prints_stable_gain(capsys):
    assert main(["design"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["spectral_radius"] < 1.0
    assert np.asarray(out["Q"]).shape == (4, 4)
    assert np.asarray(out["P"]).shape == (4, 4)
    assert len(out["K"]) == 4


def test_run_config_round_trip(tmp_path, capsys):
    cfg = {
        "experiments": [
            {"name": "tiny", "path_kind": "straight", "path_size": 40.0,
             "controller": "lq", "perturbation": [0.3, 0.0, 0.0, 0.0]},
        ],
    }
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps(cfg))
    code = main(["run", "--config", str(f), "--out-dir", str(tmp_path / "out"),
                 "--expect", "lq=converged"])
    assert code == 0
    summaries = json.loads(capsys.readouterr().out)
    assert summaries[0]["status"] == "Converged"
    assert (tmp_path / "out" / "tiny_lq.csv").exists()


def test_run_expect_mismatch(tmp_path, capsys):
    cfg = {"experiments": [
        {"name": "t", "path_kind": "straight", "path_size": 40.0,
         "controller": "lq"}]}
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(f), "--expect", "lq=jackknifed"]) == 1


def test_run_bad_config(tmp_path, capsys):
    f = tmp_path / "bad.json"
    f.write_text("{not json")
    assert main(["run", "--config", str(f)]) == 2
    f2 = tmp_path / "empty.json"
    f2.write_text(json.dumps({"experiments": []}))
    assert main(["run", "--config", str(f2)]) == 2
    f3 = tmp_path / "unk.json"
    f3.write_text(json.dumps({"experiments": [
        {"name": "x", "controller": "pid", "path_kind": "straight"}]}))
    assert main(["run", "--config", str(f3)]) == 2


def test_region_sensing_only(tmp_path, capsys):
    code = main(["region", "--sensing", "--spacing-deg", "10",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    data = np.genfromtxt(tmp_path / "region_grid.csv", delimiter=",", names=True)
    origin = data[(np.abs(data["beta3"]) < 1e-12) & (np.abs(data["beta2"]) < 1e-12)]
    assert origin["visible"] == 1


def test_region_fit_empty_margin(tmp_path, capsys):
    # sensing alone marks nothing Stable, so fitting must report an empty region
    code = main(["region", "--sensing", "--fit", "--margin", "2.0",
                 "--spacing-deg", "10", "--out-dir", str(tmp_path)])
    assert code == 1


def test_region_requires_some_work(capsys):
    assert main(["region"]) == 2


def test_qp_text_round_trip(tmp_path, capsys):
    # min (y1-1)^2 + (y2-2)^2 s.t. y1 <= 0.5, y1+y2 <= 2
    text = "2 2\n2 0\n0 2\n-2 -4\n1 0\n1 1\n-inf -inf\n0.5 2\n"
    f = tmp_path / "prob.qp"
    f.write_text(text)
    assert main(["qp", str(f)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "Optimal"
    assert np.allclose(out["y"], [0.5, 1.5], atol=1e-6)
    assert max(out["kkt"]) < 1e-6


def test_qp_malformed_file(tmp_path, capsys):
    f = tmp_path / "bad.qp"
    f.write_text("2 2\n1 2 3\n")
    assert main(["qp", str(f)]) == 2
