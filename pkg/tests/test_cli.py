import csv
import json

import numpy as np
import pytest

from ganhec import cli
from ganhec.datagen import load_pose, load_poseset
from ganhec.se3 import Pose, rotation_error, sample_uniform_rotation, so3_exp

FAST_GAN = "\n".join([
    "iterations = 30", "refine_iterations = 10", "averaging_window = 5", "q_samples = 32",
    "max_restarts = 2", 'dtype = "float64"',
])


@pytest.fixture
def small_sim(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("n = 60\nm = 40\npaired = true\n")
    out = tmp_path / "data"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    return out


def test_simulate_default_sizes(tmp_path):
    out = tmp_path / "full"
    assert cli.main(["simulate", "--out", str(out), "--noise", "0"]) == 0
    assert len(load_poseset(out / "A.poses")) == 6000
    assert len(load_poseset(out / "B.poses")) == 4000
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["config"]["loop_closure_residual"] < 1e-9


def test_simulate_missing_parent(tmp_path, capsys):
    code = cli.main(["simulate", "--out", str(tmp_path / "no" / "such" / "dir")])
    assert code == cli.EXIT_PARSE
    assert str(tmp_path / "no" / "such") in capsys.readouterr().err


def test_simulate_writes_paired_files(small_sim):
    assert cli.is_paired_file(small_sim / "pairs_A.poses")
    assert not cli.is_paired_file(small_sim / "A.poses")
    assert len(load_poseset(small_sim / "pairs_A.poses")) == 100


def test_usage_errors(tmp_path):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    assert cli.main(["calibrate", "only_one_file"]) == cli.EXIT_USAGE
    assert cli.main(["simulate", "--out", str(tmp_path / "x"), "--method", "bogus"]) == cli.EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("n = 0\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "y")]) == cli.EXIT_USAGE


def test_config_parsing(tmp_path):
    assert cli.parse_config_text('a = 1\nb = [0.5, 0.9]  # note\nc = word\n\n# x\nd = true') == \
        {"a": 1, "b": [0.5, 0.9], "c": "word", "d": True}
    assert cli.parse_config_text('{"a": 2}') == {"a": 2}
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign here\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_PARSE


def test_oracle_requires_paired_input(small_sim, tmp_path):
    code = cli.main(["calibrate", str(small_sim / "A.poses"), str(small_sim / "B.poses"),
                     "--method", "oracle", "--out", str(tmp_path / "r.json")])
    assert code == cli.EXIT_USAGE


def test_oracle_on_paired_input(small_sim, tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["calibrate", str(small_sim / "pairs_A.poses"), str(small_sim / "pairs_B.poses"),
                     "--method", "oracle", "--out", str(out)]) == 0
    est = cli.load_result_pose(out)
    truth = load_pose(small_sim / "x_true.pose")
    assert rotation_error(est.r, truth.r) < 1e-6


def test_calibrate_gan_reproducible(small_sim, tmp_path):
    cfg = tmp_path / "gan.cfg"
    cfg.write_text(FAST_GAN)
    outs = []
    for name in ("r1.json", "r2.json"):
        out = tmp_path / name
        assert cli.main(["calibrate", str(small_sim / "A.poses"), str(small_sim / "B.poses"),
                         "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    result = json.loads(outs[0])
    assert len(result["x_est"]) == 16 and 0 <= result["quality"] <= 1
    assert result["config"]["seed"] == 4 and result["restarts_used"] >= 1


def test_calibrate_moment(small_sim, tmp_path):
    out = tmp_path / "m.json"
    assert cli.main(["calibrate", str(small_sim / "A.poses"), str(small_sim / "B.poses"),
                     "--method", "moment", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["method"] == "moment"


def test_calibrate_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.poses"
    bad.write_text(" ".join(["1"] * 15) + "\n")
    good = tmp_path / "good.poses"
    good.write_text(" ".join(str(v) for v in np.eye(4).ravel()) + "\n")
    code = cli.main(["calibrate", str(bad), str(good), "--out", str(tmp_path / "r.json")])
    assert code == cli.EXIT_PARSE
    assert "line 1" in capsys.readouterr().err


def test_calibrate_solver_failure(tmp_path, capsys):
    # identical rotations everywhere: the moment solver has no spread to work with
    ident = tmp_path / "i.poses"
    ident.write_text("\n".join(" ".join(str(v) for v in np.eye(4).ravel()) for _ in range(5)) + "\n")
    code = cli.main(["calibrate", str(ident), str(ident), "--method", "moment",
                     "--out", str(tmp_path / "r.json")])
    assert code == cli.EXIT_SOLVER
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "solver_failure"


def _write_pose(path, pose):
    path.write_text(" ".join(repr(float(v)) for v in pose.matrix.ravel()) + "\n")


def test_evaluate_examples(tmp_path, capsys):
    rng = np.random.default_rng(0)
    truth = Pose(sample_uniform_rotation(rng), rng.normal(size=3))
    _write_pose(tmp_path / "t.pose", truth)
    assert cli.main(["evaluate", str(tmp_path / "t.pose"), str(tmp_path / "t.pose"),
                     "--out", str(tmp_path / "e.json")]) == 0
    rep = json.loads((tmp_path / "e.json").read_text())
    assert rep["rot_err_deg"] < 1e-5 and rep["trans_err"] == 0
    shifted = Pose(so3_exp([0.1, 0, 0]) @ truth.r, truth.p)
    (tmp_path / "r.json").write_text(json.dumps({"x_est": shifted.matrix.ravel().tolist()}))
    assert cli.main(["evaluate", str(tmp_path / "r.json"), str(tmp_path / "t.pose"),
                     "--out", str(tmp_path / "e2.json")]) == 0
    rep = json.loads((tmp_path / "e2.json").read_text())
    assert rep["rot_err_deg"] == pytest.approx(5.7296, abs=1e-4)
    (tmp_path / "broken.json").write_text("{not json")
    assert cli.main(["evaluate", str(tmp_path / "broken.json"), str(tmp_path / "t.pose")]) == \
        cli.EXIT_PARSE


def _bench(tmp_path, name, text, extra=()):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(text)
    out = tmp_path / name
    code = cli.main(["benchmark", "--config", str(cfg), "--out", str(out), "--threads", "1",
                     *extra])
    with open(out / "benchmark.csv") as fh:
        rows = list(csv.DictReader(fh))
    return code, rows, out


def test_benchmark_counts_and_summary(tmp_path):
    code, rows, out = _bench(tmp_path, "b", 'trials = 3\nn = 60\nm = 40\nmethods = ["moment", "oracle"]\n')
    assert code == 0
    data = [r for r in rows if r["trial"] not in ("mean", "std")]
    assert len(data) == 3 * 2
    for method in ("moment", "oracle"):
        errs = [float(r["rot_err_deg"]) for r in data if r["method"] == method]
        mean = next(r for r in rows if r["trial"] == "mean" and r["method"] == method)
        std = next(r for r in rows if r["trial"] == "std" and r["method"] == method)
        assert float(mean["rot_err_deg"]) == pytest.approx(sum(errs) / len(errs), rel=1e-12)
        assert float(std["rot_err_deg"]) == pytest.approx(np.std(errs), rel=1e-9, abs=1e-15)
    assert all(float(r["rot_err_deg"]) < 1e-4 for r in data if r["method"] == "oracle")
    assert json.loads((out / "manifest.json").read_text())["command"] == "benchmark"


def test_benchmark_offset_column(tmp_path):
    code, rows, _ = _bench(tmp_path, "o", 'trials = 2\noffset_fraction = 0.05\nmethods = ["moment"]\n'
                           'stream = {"n_robot": 30, "n_camera": 25}\n')
    assert code == 0
    assert all(float(r["offset"]) == 0.05 for r in rows)


def test_benchmark_partial_failure(tmp_path):
    # the oracle has no paired data on merged streams
    code, rows, _ = _bench(tmp_path, "p", 'trials = 2\noffset_fraction = 0.05\nmethods = ["moment", "oracle"]\n'
                           'stream = {"n_robot": 30, "n_camera": 25}\n')
    assert code == cli.EXIT_PARTIAL
    statuses = [r["status"] for r in rows if r["method"] == "oracle"]
    assert statuses and all(s.startswith("failed") for s in statuses)


def test_benchmark_reproducible_and_thread_independent(tmp_path):
    text = 'trials = 2\nn = 60\nm = 40\nmethods = ["gan"]\n' + FAST_GAN
    _, rows1, _ = _bench(tmp_path, "r1", text)
    _, rows2, _ = _bench(tmp_path, "r2", text, extra=("--threads", "2"))
    strip = [{k: v for k, v in r.items() if k != "wall_time"} for r in rows1]
    assert strip == [{k: v for k, v in r.items() if k != "wall_time"} for r in rows2]


def test_polyfit_runs(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("runs = 1\niterations = 40\naveraging_window = 10\nq_samples = 16\n")
    out = tmp_path / "poly"
    assert cli.main(["polyfit", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    with open(out / "coefficients.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["runs"] == 1 and len(summary["mean"]) == 3


def test_polyfit_default_run_count():
    assert cli.POLY_DEFAULTS["runs"] == 100
