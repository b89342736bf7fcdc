import json
from pathlib import Path

import numpy as np
import pytest

from blendnet import selftest
from blendnet.autodiff import checkpoint
from blendnet.cli import main
from blendnet.cli.commands import UsageError, ablation_grid
from blendnet.config import RunConfig
from blendnet.evaluation import read_results

TINY = """[run]
epochs = 1
[synth]
num_train = 2
num_test = 1
frames_per_clip = 4
[blend]
T_train = 3
T_test = 3
[schedule]
warmup_iters = 4
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    assert main(["gen", "--config", str(root / "tiny.ini"), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "tiny.ini"), "--data", str(root / "data"),
                 "--out", str(root / "run")]) == 0
    return root


def run(work, *argv):
    return main([argv[0], "--config", str(work / "tiny.ini"), *argv[1:]])


# ---------------------------------------------------------------- gen

def test_gen_layout_and_manifest(work):
    manifest = json.loads((work / "data" / "dataset.json").read_text())
    assert sorted(p.name for p in (work / "data" / "train").iterdir()) == ["train0000", "train0001"]
    assert sorted(p.name for p in (work / "data" / "test").iterdir()) == ["test0000"]
    assert manifest["seed"] == 0 and len(manifest["files"]) == 3 * (4 + 1)


def test_gen_same_seed_same_hash(work, tmp_path):
    assert run(work, "gen", "--out", str(tmp_path / "a")) == 0
    assert run(work, "gen", "--out", str(tmp_path / "b"), "--seed", "5") == 0
    ref = json.loads((work / "data" / "dataset.json").read_text())["sha256"]
    assert json.loads((tmp_path / "a" / "dataset.json").read_text())["sha256"] == ref
    assert json.loads((tmp_path / "b" / "dataset.json").read_text())["sha256"] != ref


def test_gen_refuses_non_empty_dir_without_force(work, tmp_path):
    (tmp_path / "keep.txt").write_text("x")
    assert run(work, "gen", "--out", str(tmp_path)) == 1
    assert run(work, "gen", "--out", str(tmp_path), "--force") == 0
    assert (tmp_path / "keep.txt").exists() and (tmp_path / "dataset.json").exists()


def test_gen_zero_clips_is_error(tmp_path):
    (tmp_path / "zero.ini").write_text("[synth]\nnum_test = 0\n")
    assert main(["gen", "--config", str(tmp_path / "zero.ini"), "--out", str(tmp_path / "d")]) == 1


# ---------------------------------------------------------------- train / eval

def test_train_echoes_config(work):
    echoed = RunConfig.load(work / "run" / "config.ini")
    assert echoed == RunConfig.from_ini(TINY)
    manifest = json.loads((work / "run" / "manifest.json").read_text())
    assert manifest["epochs"][0]["checkpoint"] == "checkpoint_epoch01.bin"


def test_eval_outputs(work, tmp_path):
    out = tmp_path / "ev"
    assert run(work, "eval", "--data", str(work / "data"), "--checkpoint",
               str(work / "run" / "checkpoint_epoch01.bin"), "--out", str(out), "--t-test", "5") == 0
    assert RunConfig.load(out / "config.ini").T_test == 5
    dets = read_results(out / "results.txt")
    assert all(d.clip_id == "test0000" for d in dets)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["T_test"] == 5 and summary["num_detections"] == len(dets)
    assert "mAP@0.5" in (out / "report.txt").read_text()
    assert (out / "report.csv").read_text().startswith("visibility,num_gt,recalled,recall\n")


def test_eval_shape_mismatch_names_record(work, tmp_path, capsys):
    (tmp_path / "wide.ini").write_text(TINY + "[detector]\nhead_width = 32\n")
    code = main(["eval", "--config", str(tmp_path / "wide.ini"), "--data", str(work / "data"),
                 "--checkpoint", str(work / "run" / "checkpoint_epoch01.bin"), "--out", str(tmp_path / "e")])
    assert code == 2 and "record 'fpn." in capsys.readouterr().err


def test_eval_empty_split_is_error(work, tmp_path):
    (tmp_path / "d" / "test").mkdir(parents=True)
    assert run(work, "eval", "--data", str(tmp_path / "d"), "--checkpoint",
               str(work / "run" / "checkpoint_epoch01.bin"), "--out", str(tmp_path / "e")) == 2


def test_train_nan_loss_exits_runtime_error(work, tmp_path):
    state = checkpoint.load(work / "run" / "checkpoint_epoch01.bin")
    state["head.cls.out.b"][:] = np.nan
    checkpoint.save(tmp_path / "bad.bin", state)
    assert run(work, "train", "--data", str(work / "data"), "--checkpoint", str(tmp_path / "bad.bin"),
               "--out", str(tmp_path / "r")) == 2
    assert list((tmp_path / "r").glob("nonfinite_*.json"))


# ---------------------------------------------------------------- ablate

def test_ablation_grid_rows():
    assert [c["insertion_point"] for c in ablation_grid("insertion_point", [])[1]] == [
        "after_add", "after_1x1", "after_3x3"]
    assert len(ablation_grid("embedding_strategy", [])[1]) == 2
    assert ablation_grid("", []) == ([], [{}])
    axes, combos = ablation_grid("order,T_test", ["T_test=3,9"])
    assert len(combos) == 5 * 2 and combos[1] == {"order": "none", "T_test": 9}


def test_ablation_grid_errors():
    with pytest.raises(UsageError, match="valid axes: insertion_point"):
        ablation_grid("depth", [])
    with pytest.raises(UsageError):
        ablation_grid("order", ["T_test=3"])


def test_ablate_runs_and_shares_training(work, tmp_path):
    out = tmp_path / "ab"
    assert run(work, "ablate", "--data", str(work / "data"), "--axes", "T_test", "--values", "T_test=1,3",
               "--out", str(out)) == 0
    assert [p.name for p in (out / "runs").iterdir()] == ["baseline"]
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("T_test,mAP,") and [l.split(",")[0] for l in lines[1:]] == ["1", "3"]


def test_ablate_unknown_axis_exit_code(work, tmp_path):
    assert run(work, "ablate", "--axes", "depth", "--out", str(tmp_path)) == 1


# ---------------------------------------------------------------- visualize

def vis(work, out, *extra):
    return run(work, "visualize", "--data", str(work / "data"), "--checkpoint",
               str(work / "run" / "checkpoint_epoch01.bin"), "--clip", "test0000", "--t", "1",
               "--out", str(out), *extra)


def test_visualize_writes_one_map_per_offset(work, tmp_path):
    assert vis(work, tmp_path / "v") == 0
    names = sorted(p.name for p in (tmp_path / "v").glob("*.png"))
    assert names == ["attn_test0000_1_-1.png", "attn_test0000_1_0.png", "attn_test0000_1_1.png",
                     "frame_test0000_1.png"]


def test_visualize_flags_flat_maps_of_untrained_model(work, tmp_path):
    state = checkpoint.load(work / "run" / "checkpoint_epoch01.bin")
    for name in state:
        if name.startswith("tcm."):
            state[name][...] = 0.0
    checkpoint.save(tmp_path / "zero.bin", state)
    code = run(work, "visualize", "--data", str(work / "data"), "--checkpoint", str(tmp_path / "zero.bin"),
               "--clip", "test0000", "--t", "0", "--out", str(tmp_path / "v"))
    meta = json.loads((tmp_path / "v" / "visualize.json").read_text())
    assert code == 0 and [a["flat"] for a in meta["attention"]] == [True, True, True]


def test_visualize_without_temporal_module_is_error(work, tmp_path):
    (tmp_path / "none.ini").write_text(TINY.replace("T_test = 3\n", "T_test = 3\norder = none\n"))
    code = main(["visualize", "--config", str(tmp_path / "none.ini"), "--data", str(work / "data"),
                 "--checkpoint", str(work / "run" / "checkpoint_epoch01.bin"), "--clip", "test0000", "--t", "0",
                 "--out", str(tmp_path / "v")])
    assert code == 2


def test_visualize_bad_clip_is_usage_error(work, tmp_path):
    assert run(work, "visualize", "--data", str(work / "data"), "--checkpoint",
               str(work / "run" / "checkpoint_epoch01.bin"), "--clip", "nope", "--t", "0",
               "--out", str(tmp_path)) == 1


# ---------------------------------------------------------------- misc

def test_selftest_exit_codes(monkeypatch):
    assert main(["selftest"]) == 0
    monkeypatch.setattr(selftest, "CHECKS", (("always fails", lambda: (False, "forced")),))
    assert main(["selftest"]) == 3


@pytest.mark.parametrize("argv", [[], ["bogus"], ["eval", "--out", "x"], ["gen", "--seed", "-1"]])
def test_usage_errors(argv):
    assert main(argv) == 1


def test_missing_config_file(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == 1
    assert not Path(tmp_path / "o").exists()
