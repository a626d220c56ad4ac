import json

import numpy as np
import pytest

from dualretarget.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from dualretarget.fixtures import load_fixture
from dualretarget.motion_io import DualMotionClip, format_keypoints


@pytest.fixture(scope="module")
def short_clip(tmp_path_factory):
    full = load_fixture("handshake")
    clip = DualMotionClip(full.frame_dt, full.keypoints[100:112], full.names)
    path = tmp_path_factory.mktemp("clip") / "shake.kp"
    path.write_text(format_keypoints(clip))
    return path


def run_pipeline(clip_path, out):
    assert main(["retarget", str(clip_path), "--out", str(out), "--sqp-iters-per-frame", "3"]) == EXIT_OK
    assert main(["metrics", "--traj", str(out / "shake.traj.json"), "--clip", str(clip_path),
                 "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def pipeline(short_clip, tmp_path_factory):
    return run_pipeline(short_clip, tmp_path_factory.mktemp("run"))


def test_retarget_outputs(pipeline):
    for suffix in ("traj", "graphs", "diag", "metrics"):
        json.loads((pipeline / f"shake.{suffix}.json").read_text())
    diag = json.loads((pipeline / "shake.diag.json").read_text())
    assert len(diag) == 12
    metrics = json.loads((pipeline / "shake.metrics.json").read_text())["metrics"]
    assert metrics["ipr"] == 0.0


def test_metrics_byte_identical(short_clip, pipeline, tmp_path):
    again = run_pipeline(short_clip, tmp_path)
    for name in ("shake.metrics.json", "shake.traj.json", "shake.traces.csv"):
        assert (again / name).read_bytes() == (pipeline / name).read_bytes(), name


def test_rewards_and_graphs(short_clip, pipeline, tmp_path):
    args = ["--traj", str(pipeline / "shake.traj.json"), "--clip", str(short_clip), "--out", str(tmp_path)]
    assert main(["rewards", *args]) == EXIT_OK
    rows = (tmp_path / "shake.rewards.csv").read_text().splitlines()
    assert rows[0] == "frame,r_inter,r_contact,weighted" and len(rows) == 13
    vals = np.array([[float(x) for x in r.split(",")[1:3]] for r in rows[1:]])
    assert np.all((vals > 0) & (vals <= 1))
    assert main(["graphs", *args]) == EXIT_OK
    assert json.loads((tmp_path / "shake.graphs.json").read_text())


def test_dry_run_writes_nothing(short_clip, tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["retarget", str(short_clip), "fixture:hug", "--out", str(out), "--dry-run"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "would retarget" in text and "hug.traj.json" in text
    assert not out.exists()


def test_missing_robot_spec(short_clip, tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["retarget", str(short_clip), "--out", str(tmp_path), "--robot", str(missing)])
    assert code == EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_corrupt_trajectory(short_clip, tmp_path):
    bad = tmp_path / "bad.traj.json"
    bad.write_text('{"format": "robot_trajectory", "frames": [')
    assert main(["metrics", "--traj", str(bad), "--clip", str(short_clip), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_input(tmp_path):
    assert main(["retarget", str(tmp_path / "ghost.kp"), "--out", str(tmp_path)]) == EXIT_IO


def test_usage_errors():
    assert main(["retarget"]) == EXIT_USAGE
    assert main(["sync", "--bogus"]) == EXIT_USAGE
    assert main(["sync", "--k", "-1"]) == EXIT_CONFIG
    assert main(["retarget", "fixture:waltz", "--dry-run"]) == EXIT_CONFIG


def read_sync(path):
    rows = path.read_text().splitlines()[1:]
    return np.array([[float(x) for x in r.split(",")] for r in rows])


def test_sync_defaults_bounded(tmp_path, capsys):
    assert main(["--seed", "11", "sync", "--out", str(tmp_path)]) == EXIT_OK
    assert "seed 11" in capsys.readouterr().out
    tr = read_sync(tmp_path / "sync_trace.csv")
    assert tr[-1, 0] == pytest.approx(60.0, abs=0.05)
    assert np.abs(tr[:, 3]).max() < 0.01
    first = (tmp_path / "sync_trace.csv").read_bytes()
    assert main(["--seed", "11", "sync", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "sync_trace.csv").read_bytes() == first


def test_sync_open_loop_grows(tmp_path):
    assert main(["sync", "--k", "0", "--delay", "0", "0", "--duration", "20", "--out", str(tmp_path)]) == EXIT_OK
    tr = read_sync(tmp_path / "sync_trace.csv")
    assert np.allclose(tr[:, 3], 2e-3 * tr[:, 0], atol=1e-9)
