import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendnet.autodiff import checkpoint
from blendnet.config import ConfigError, RunConfig
from blendnet.training import NonFiniteLossError, build_detector, learning_rate, train
from blendnet.video import SynthConfig, generate_synthetic


def test_defaults_mirror_split():
    cfg = RunConfig()
    assert (cfg.num_train, cfg.num_test, cfg.frames_per_clip) == (40, 10, 40)
    assert (cfg.epochs, cfg.warmup_iters, cfg.decay_epochs) == (14, 500, (6, 11))
    assert cfg.synth_config("train").stream != cfg.synth_config("test").stream


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), epochs=st.integers(1, 30), lr=st.floats(1e-6, 1.0),
       T=st.sampled_from([1, 3, 5, 7]), order=st.sampled_from(["none", "tcm_only", "scm_then_tcm"]),
       decay=st.lists(st.integers(1, 20), max_size=3), path=st.text("abc/_-.", min_size=1, max_size=12))
def test_ini_roundtrip(seed, epochs, lr, T, order, decay, path):
    cfg = RunConfig(seed=seed, epochs=epochs, lr_peak=lr, T_train=T, order=order, decay_epochs=tuple(decay),
                    train_dir=path)
    back = RunConfig.from_ini(cfg.to_ini())
    assert back == cfg and back.digest() == cfg.digest()


def test_file_roundtrip(tmp_path):
    cfg = RunConfig(seed=9, insertion_point="after_3x3", anchor_base_sizes=(8.0, 16.0, 32.0, 64.0, 128.0))
    cfg.save(tmp_path / "c.ini")
    assert RunConfig.load(tmp_path / "c.ini") == cfg


def test_partial_file_keeps_defaults():
    cfg = RunConfig.from_ini("# comment\n[run]\nepochs = 3\n\n[blend]\nT_test = 21\n")
    assert cfg == RunConfig(epochs=3, T_test=21)


@pytest.mark.parametrize("text, message", [
    ("[run]\nbogus = 1\n", "unknown key 'bogus'"),
    ("[blend]\nepochs = 1\n", "belongs in [run]"),
    ("[blend]\norder = sideways\n", "order must be one of"),
    ("[blend]\nT_train = 4\n", "T_train must be odd"),
    ("[run]\nepochs = many\n", "epochs"),
    ("not a section\n", "<config>"),
])
def test_config_errors(text, message):
    with pytest.raises(ConfigError, match=message.replace("[", r"\[").replace("]", r"\]")):
        RunConfig.from_ini(text)


# ---------------------------------------------------------------- schedule

@pytest.mark.parametrize("iteration, epoch, expected", [
    (0, 1, 0.002), (250, 1, 0.006), (500, 1, 0.01), (5000, 5, 0.01),
    (5000, 6, 0.001), (9000, 10, 0.001), (9000, 11, 0.0001), (12000, 14, 0.0001),
])
def test_learning_rate_examples(iteration, epoch, expected):
    assert learning_rate(iteration, epoch, RunConfig()) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 14))
def test_learning_rate_bounds(iteration, epoch):
    lr = learning_rate(iteration, epoch, RunConfig())
    assert 0.002 * 0.01 - 1e-15 <= lr <= 0.01 + 1e-15


# ---------------------------------------------------------------- training loop

def tiny(**kw):
    base = dict(epochs=2, num_train=1, frames_per_clip=3, T_train=3, T_test=3, warmup_iters=2, decay_epochs=(2,))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def clip():
    return generate_synthetic(SynthConfig(num_clips=1, frames_per_clip=3))


def test_training_is_deterministic(tmp_path, clip):
    cfg = tiny()
    train(cfg, clip, clip, tmp_path / "a", log=lambda *_: None)
    train(cfg, clip, clip, tmp_path / "b", log=lambda *_: None)
    for name in ("manifest.json", "checkpoint_epoch01.bin", "checkpoint_epoch02.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_sha256"] == cfg.digest()
    lrs = [lr for e in manifest["epochs"] for lr in e["lr"]]
    expected = [learning_rate(i, 1 + i // 3, cfg) for i in range(6)]
    assert lrs == expected
    state = checkpoint.load(tmp_path / "a" / "checkpoint_epoch02.bin")
    assert set(state) == set(build_detector(cfg).params)


def test_gradient_accumulation_runs(tmp_path, clip):
    _, records = train(tiny(epochs=1, snippets_per_step=2), clip, [], tmp_path, log=lambda *_: None)
    assert len(records[0].lr) == 2 and records[0].val_map is None


def test_nonfinite_loss_aborts_with_dump(tmp_path, clip):
    cfg = tiny()
    model = build_detector(cfg)
    model.params["head.cls.out.b"].data[...] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        train(cfg, clip, [], tmp_path, log=lambda *_: None, model=model)
    dump = json.loads(info.value.dump_path.read_text())
    assert dump["epoch"] == 1 and dump["iteration"] == 0 and dump["loss"] == "nan"
    assert isinstance(dump["augment_seed"], int) and dump["clip"] == clip[0].id


def test_empty_training_split_rejected(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        train(tiny(), [], [], tmp_path)
