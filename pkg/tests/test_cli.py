import json
import subprocess
import sys

import numpy as np
import pytest

from jcdnet import autograd as ag
from jcdnet.cli import EXIT_GRADCHECK, EXIT_INVALID, EXIT_OK, cmd_gradcheck, main
from jcdnet.data import write_features
from jcdnet.evaluation import THUMOS14_CLASSES
from jcdnet.gradcheck import GradCheck, default_checks

SMALL = ["--preset", "synthetic", "--set", "optim.epochs=2", "--set", "optim.batch_size=8",
         "--set", "model.hidden_dim=8"]


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(root), "--set", "num_videos=24", "--seed", "3", "--holdout", "8"]) == 0
    return root


def test_synth_defaults(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "a")]) == EXIT_OK
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["videos"]) == 200 and len(manifest["classes"]) == 4
    assert len(manifest["conjoint_sets"]) == 2
    assert "200 videos" in capsys.readouterr().out
    assert main(["synth", "--out", str(tmp_path / "b")]) == EXIT_OK
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_synth_invalid_writes_nothing(tmp_path, capsys):
    out = tmp_path / "bad"
    assert main(["synth", "--out", str(out), "--set", "feature_dim=1"]) == EXIT_INVALID
    assert not out.exists()
    assert "feature_dim" in capsys.readouterr().err
    assert main(["synth", "--out", str(out), "--set", "colour=3"]) == EXIT_INVALID
    assert main(["synth", "--out", str(out), "--holdout", "500"]) == EXIT_INVALID
    assert not out.exists()


def test_usage_errors_exit_one(tmp_path):
    assert main([]) == EXIT_INVALID
    assert main(["train", "--out", str(tmp_path)]) == EXIT_INVALID  # no manifest
    assert main(["train", "--out", str(tmp_path / "x"), "--manifest", str(tmp_path / "missing.json")]) == EXIT_INVALID
    assert not (tmp_path / "x").exists()
    assert main(["--help"]) == EXIT_OK


def test_train_eval_round_trip(small_data, tmp_path, capsys):
    run = tmp_path / "run"
    argv = ["train", "--out", str(run), "--manifest", str(small_data / "manifest_train.json"), *SMALL]
    assert main(argv) == EXIT_OK
    assert main([*argv[:2], str(tmp_path / "run2"), *argv[3:]]) == EXIT_OK
    assert (run / "checkpoint.jcdc").read_bytes() == (tmp_path / "run2" / "checkpoint.jcdc").read_bytes()
    log = [json.loads(x) for x in (run / "train_log.jsonl").read_text().splitlines()]
    assert log and log[-1]["epoch"] == 2
    capsys.readouterr()

    ev = ["eval", "--manifest", str(small_data / "manifest_test.json"), "--checkpoint", str(run / "checkpoint.jcdc"),
          *SMALL]
    assert main([*ev, "--out", str(tmp_path / "e1")]) == EXIT_OK
    table = capsys.readouterr().out
    assert "0.3:0.9" in table and "0.5:0.9" in table
    assert main([*ev, "--out", str(tmp_path / "e2")]) == EXIT_OK
    assert _files(tmp_path / "e1") == _files(tmp_path / "e2")
    report = json.loads((tmp_path / "e1" / "report.json").read_text())
    assert "AVG(0.3:0.9)" in report["summary"]


def test_eval_dim_mismatch_names_tensors(small_data, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--out", str(run), "--manifest", str(small_data / "manifest.json"), *SMALL]) == 0
    capsys.readouterr()
    code = main(["eval", "--out", str(tmp_path / "e"), "--manifest", str(small_data / "manifest.json"),
                 "--checkpoint", str(run / "checkpoint.jcdc"), *SMALL, "--set", "model.hidden_dim=16"])
    assert code == EXIT_INVALID
    err = capsys.readouterr().err
    assert "embed.w: checkpoint (3, 64, 8) vs config (3, 64, 16)" in err and "head.w" in err
    assert not (tmp_path / "e").exists()


def _thumos_fixture(root):
    classes = list(THUMOS14_CLASSES)
    videos, lines = [], []
    for i, c in enumerate(classes):
        write_features(root / f"v{i}.jcdf", np.ones((8, 4), np.float32))
        videos.append({"video_id": f"v{i}", "feature_path": f"v{i}.jcdf", "labels": [c],
                       "segments": [{"t_start": 1.0, "t_end": 3.0, "class": c}]})
        lines.append(json.dumps({"video_id": f"v{i}", "t_start": 1.0, "t_end": 3.0, "score": 0.9, "label": c}))
    (root / "manifest.json").write_text(json.dumps({"classes": classes, "videos": videos}))
    (root / "gt.jsonl").write_text("\n".join(lines) + "\n")


def test_eval_on_ground_truth_proposals(tmp_path, capsys):
    _thumos_fixture(tmp_path)
    base = ["eval", "--manifest", str(tmp_path / "manifest.json"), "--proposals", str(tmp_path / "gt.jsonl")]
    assert main([*base, "--out", str(tmp_path / "all"), "--activitynet"]) == EXIT_OK
    report = json.loads((tmp_path / "all" / "report.json").read_text())
    assert len(report["per_class"]) == 20
    assert all(v == 1.0 for v in report["summary"].values())
    assert "AVG(0.5:0.95)" in report["summary"]
    assert main([*base, "--out", str(tmp_path / "sub"), "--subset", "conjoint"]) == EXIT_OK
    report = json.loads((tmp_path / "sub" / "report.json").read_text())
    assert len(report["per_class"]) == 11 and "Billiards" not in report["per_class"]
    assert all(v == 1.0 for v in report["summary"].values())


def test_ablate_sorted_table(small_data, tmp_path, capsys):
    code = main(["ablate", "--out", str(tmp_path), "--manifest", str(small_data / "manifest_train.json"),
                 "--eval-manifest", str(small_data / "manifest_test.json"), "--experiments", "10,1,3",
                 "--seeds", "0,1", *SMALL, "--set", "optim.epochs=1"])
    assert code == EXIT_OK
    rows = (tmp_path / "ablation.txt").read_text().splitlines()[2:]
    assert [int(r.split()[0]) for r in rows] == [1, 3, 10]
    doc = json.loads((tmp_path / "ablation.json").read_text())
    assert sorted(doc) == ["1", "10", "3"] and sorted(doc["3"]) == ["0", "1"]
    assert main(["ablate", "--out", str(tmp_path / "x"), "--manifest", str(small_data / "manifest.json"),
                 "--experiments", "12"]) == EXIT_INVALID


def test_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("matmul", "softmax", "topk_mean", "conv1d_k3", "casl_loss", "total_loss"):
        assert name in out
    assert "max_rel_err" in out and "all 34 gradient checks passed" in out


def _broken_exp(rng):
    x = ag.Tensor(rng.uniform(-1, 1, (3,)), requires_grad=True, dtype=np.float64)

    def fn(p):
        out = ag.exp(p)
        inner = out._backward
        out._backward = lambda g: inner(3.0 * g)  # deliberately wrong
        return out.sum()

    return fn, [x]


def test_gradcheck_names_corrupted_op(capsys):
    checks = default_checks()[:2] + [GradCheck("broken_exp", _broken_exp)]
    assert cmd_gradcheck(checks=checks) == EXIT_GRADCHECK
    out = capsys.readouterr().out
    assert "failed for: broken_exp" in out
    assert [line.split()[0] for line in out.splitlines() if line.endswith("FAIL")] == ["broken_exp"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "jcdnet", "synth", "--out", str(tmp_path), "--set", "feature_dim=0"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_INVALID
    events = [json.loads(line) for line in proc.stderr.splitlines() if line.startswith("{")]
    assert events and events[0]["event"] == "invalid_input"
