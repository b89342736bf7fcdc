"""Acceptance suite: one or more tests per criterion, named ``test_criterion_NN_*``.

The per-criterion PASS/FAIL summary is printed at the end of the pytest run
(see conftest.py). Criterion 6 trains two full detectors and is marked slow.
"""
import itertools
import json
import math
import time
import zlib

import numpy as np
import pytest

from blendnet import autodiff as ad
from blendnet import oracles
from blendnet.autodiff import Tensor, checkpoint
from blendnet.autodiff.gradcheck import check_gradients, pinned_sensitivity
from blendnet.blend import (BlendConfig, EmbeddingStrategy, InsertionPoint, ScmWeights, TcmWeights, scm_forward,
                            spatial_attention, tcm_forward, temporal_attention_map, temporal_softmax)
from blendnet.config import RunConfig
from blendnet.detector import Detector
from blendnet.detector.inference import detect_clip, postprocess, prepare_frames
from blendnet.evaluation import Detection, GroundTruth, average_precision, parse_results, stratified_report
from blendnet.evaluation.results import format_results
from blendnet.training import (build_detector, detection_loss, evaluate, ground_truths, learning_rate,
                               prepare_snippet, train)
from blendnet.video import Box, VideoClip, generate_synthetic, load_annotations, load_clip, save_annotations, \
    save_clip
from test_autodiff import OP_CASES, rand

QUIET = dict(log=lambda *_: None)


def _tol(a, b):
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


# ---------------------------------------------------------------- 1. oracle equivalence

def _random_case(rng):
    T = int(rng.choice([1, 3, 5]))
    c = int(rng.integers(1, 9))
    h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    xs = [Tensor(rng.standard_normal((c, h, w))) for _ in range(T)]
    return T, c, h, w, xs


def test_criterion_01_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = {"scm": 0.0, "softmax": 0.0, "attention": 0.0, "tcm": 0.0}
    for _ in range(120):
        T, c, h, w, xs = _random_case(rng)
        scm = ScmWeights.init(c, 1, rng=rng, std=1.0)
        ref = oracles.scm_loop(xs[0].data.tolist(), scm.w1.data.tolist(), scm.w2.data.tolist(),
                               scm.w3.data.tolist())
        worst["scm"] = max(worst["scm"], _tol(scm_forward(xs[0], scm).data, ref))

        embed = rng.standard_normal((T, h, w)) * 3
        weights = temporal_softmax(Tensor(embed))
        worst["softmax"] = max(worst["softmax"], _tol(weights.data, oracles.temporal_softmax_loop(embed.tolist())))
        for t in range(T):
            ref = oracles.attention_map_loop(weights.data.tolist(), t)
            worst["attention"] = max(worst["attention"], _tol(temporal_attention_map(weights, t).data, ref))

        tcm = TcmWeights.init(c, int(rng.choice([1, 3, 5])), rng=rng, std=0.5)
        w4s, w5s, w6s = tcm.resolve(T)
        ref = oracles.tcm_loop([x.data.tolist() for x in xs], [a.data.tolist() for a in w4s],
                               [a.data.tolist() for a in w5s], [a.data.tolist() for a in w6s])
        worst["tcm"] = max(worst["tcm"], _tol(tcm_forward(xs, tcm).data, ref))
    elapsed = time.perf_counter() - start
    assert all(v <= 1e-10 for v in worst.values()), worst
    assert elapsed < 60


# ---------------------------------------------------------------- 2. gradient correctness

EXTRA_CASES = {
    # entries kept away from 0 so the kink of abs is never straddled
    "abs": lambda r: ([Tensor(r.uniform(0.2, 1.0, (6,)) * r.choice([-1, 1], 6), requires_grad=True)], ad.abs_),
    "reshape": lambda r: ([rand(r, 2, 6)], lambda a: ad.reshape(a, (3, 4))),
    "scale": lambda r: ([rand(r, 3, 2)], lambda a: ad.scale(a, -2.5)),
    "sum_axes": lambda r: ([rand(r, 2, 3, 4)], lambda a: ad.sum_(a, axes=(0, 2))),
}


def test_criterion_02_every_op_matches_finite_differences():
    start = time.perf_counter()
    worst = {}
    for name, make in sorted({**OP_CASES, **EXTRA_CASES}.items()):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        inputs, fn = make(rng)
        probe = Tensor(rng.standard_normal(fn(*inputs).shape))
        worst[name] = check_gradients(lambda: ad.sum_(ad.mul(fn(*inputs), probe)), inputs)

    rng = np.random.default_rng(7)
    scm = ScmWeights.init(4, 2, rng=rng, std=1.0)
    x = Tensor(rng.standard_normal((4, 3, 2)), requires_grad=True)
    probe = Tensor(rng.standard_normal((4, 3, 2)))
    worst["scm"] = check_gradients(lambda: ad.sum_(ad.mul(scm_forward(x, scm), probe)),
                                   [x, scm.w1, scm.w2, scm.w3])
    tcm = TcmWeights.init(3, 3, rng=rng, std=0.5)
    xs = [Tensor(rng.standard_normal((3, 2, 3)), requires_grad=True) for _ in range(3)]
    probe = Tensor(rng.standard_normal((3, 2, 3)))
    worst["tcm"] = check_gradients(
        lambda: ad.sum_(ad.mul(tcm_forward(xs, tcm, EmbeddingStrategy.POSITIONAL), probe)),
        list(tcm.named().values()) + xs)
    assert max(worst.values()) < 1e-4, {k: v for k, v in worst.items() if v >= 1e-4}
    assert time.perf_counter() - start < 300


@pytest.mark.parametrize("strategy", ["main_and_refs", "positional"])
def test_criterion_02_snippet_loss_matches_finite_differences(strategy):
    """Composed loss on a 2-frame 64x64 clip (T=3 snippet), 50 sampled parameter entries."""
    start = time.perf_counter()
    rng = np.random.default_rng(zlib.crc32(strategy.encode()) + 1)
    model = Detector(blend=BlendConfig(T=3, order="tcm_then_scm", embedding_strategy=strategy), seed=11)
    for name, t in model.params.items():
        if name.startswith(("tcm.", "scm.")):
            t.data[...] = rng.normal(0, 0.1, t.shape)
    clip = rng.random((2, 3, 64, 64))
    frames = clip[[0, 0, 1]]
    boxes, labels = np.array([[8.0, 10.0, 40.0, 42.0]]), np.array([0])
    anchors = model.anchors(64, 64)

    def loss():
        return detection_loss(model, frames, boxes, labels, anchors)[0]

    names = sorted(model.params)
    sizes = np.array([model.params[n].data.size for n in names], dtype=np.float64)
    picks = rng.choice(len(names), size=50, p=np.sqrt(sizes) / np.sqrt(sizes).sum())
    worst = 0.0
    for k in sorted(set(picks.tolist())):
        worst = max(worst, check_gradients(loss, [model.params[names[k]]], max_entries=int((picks == k).sum()),
                                           rng=rng, pinned=strategy == "main_and_refs"))
    assert worst < 1e-3
    assert time.perf_counter() - start < 300


# ---------------------------------------------------------------- 3. residual identities

@pytest.mark.parametrize("site", [p.value for p in InsertionPoint])
def test_criterion_03_zero_transforms_equal_baseline(site):
    rng = np.random.default_rng(3)
    frames = rng.random((5, 3, 128, 128))
    blended = Detector(blend=BlendConfig(T=5, order="tcm_then_scm", insertion_point=site), seed=5)
    base = Detector(blend=BlendConfig(T=1, order="none", insertion_point=site), seed=5)
    for name, t in blended.params.items():
        if name.startswith("tcm.w4") or name.startswith(("scm.w1", "scm.w2")):
            t.data[...] = rng.normal(0, 1.0, t.shape)  # attention stays live; only the transforms vanish
        elif name.startswith(("tcm.w5", "tcm.w6", "scm.w3")):
            t.data[...] = 0.0
    for name, t in base.params.items():
        assert np.array_equal(t.data, blended.params[name].data)
    a = blended.head_forward(blended.snippet_pyramid(frames))
    b = base.forward_image(frames[2])
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)


def test_criterion_03_single_frame_path_equals_multi_frame_path():
    clip = generate_synthetic(RunConfig(num_test=1, frames_per_clip=6).synth_config("test"))[0]
    model = Detector(blend=BlendConfig(T=1, order="none"), seed=8)
    frames, geo = prepare_frames(clip)
    anchors = model.anchors(geo.out_w, geo.out_h).cxcywh
    pyramids = model.backbone_forward(frames)
    single = []
    for t in range(len(clip)):
        probs, deltas = model.head_forward(pyramids[t])
        p1, d1 = model.forward_image(frames[t])
        assert np.array_equal(probs.data, p1.data) and np.array_equal(deltas.data, d1.data)
        for box, cls, score in postprocess(p1.data, d1.data, anchors, geo.out_w, geo.out_h):
            b = geo.inverse_boxes([box])[0]
            if b[2] > b[0] and b[3] > b[1]:
                single.append(Detection(clip.id, t, tuple(float(v) for v in b), cls, score))
    assert detect_clip(model, clip, T_test=1) == single


# ---------------------------------------------------------------- 4. normalisation invariants

def test_criterion_04_attention_weights_sum_to_one():
    rng = np.random.default_rng(404)
    worst_t = worst_s = 0.0
    for _ in range(1000):
        T, c = int(rng.integers(1, 8)), int(rng.integers(1, 9))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        scale = 10.0 ** rng.uniform(-3, 3)
        weights = temporal_softmax(Tensor(scale * rng.standard_normal((T, h, w)))).data
        worst_t = max(worst_t, float(np.max(np.abs(weights.sum(axis=0) - 1.0))))
        x = Tensor(scale * rng.standard_normal((c, h, w)))
        alpha = spatial_attention(x, ScmWeights.init(c, 1, rng=rng, std=1.0)).data
        worst_s = max(worst_s, abs(float(alpha.sum()) - 1.0))
    assert worst_t <= 1e-12 and worst_s <= 1e-12


# ---------------------------------------------------------------- 5. gradient blocking

def _sensitivity(strategy, rng, level):
    if level == "module":
        tcm = TcmWeights.init(4, 3, rng=rng, std=0.5)
        xs = [Tensor(rng.standard_normal((4, 3, 3))) for _ in range(3)]
        probe = Tensor(rng.standard_normal((4, 3, 3)))
        fn = lambda: ad.sum_(ad.mul(tcm_forward(xs, tcm, strategy), probe))  # noqa: E731
        target = xs[0].data
    else:
        model = Detector(blend=BlendConfig(T=3, order="tcm_only", embedding_strategy=strategy), seed=2)
        for name, t in model.params.items():
            if name.startswith("tcm."):
                t.data[...] = rng.normal(0, 0.2, t.shape)
        frames = rng.random((3, 3, 64, 64))
        anchors = model.anchors(64, 64)
        gt = np.array([[10.0, 12.0, 44.0, 40.0]])
        fn = lambda: detection_loss(model, frames, gt, np.array([0]), anchors)[0]  # noqa: E731
        target = frames[0]
    idx = rng.choice(target.size, size=min(target.size, 40), replace=False)
    return float(np.max(np.abs(pinned_sensitivity(fn, target, idx))))


@pytest.mark.parametrize("level", ["module", "detector"])
def test_criterion_05_reference_frames_blocked_under_main_and_refs(level):
    blocked = _sensitivity(EmbeddingStrategy.MAIN_AND_REFS, np.random.default_rng(5), level)
    open_ = _sensitivity(EmbeddingStrategy.POSITIONAL, np.random.default_rng(5), level)
    assert blocked <= 1e-9
    assert open_ > 1e-6


# ---------------------------------------------------------------- 6. directional occlusion claim

LOW_BIN = "[0.0, 0.3)"


def _recall(dets, gts, label):
    return next(r.recall for r in stratified_report(dets, gts) if r.label == label)


@pytest.mark.slow
def test_criterion_06_tcm_beats_baseline_under_occlusion(acceptance_report, tmp_path):
    start = time.perf_counter()
    cfg = RunConfig()  # default synthetic benchmark, 14 epochs, seed 0
    assert cfg.occluder_density >= 0.3 and cfg.epochs == 14
    train_clips = generate_synthetic(cfg.synth_config("train"))
    test_clips = generate_synthetic(cfg.synth_config("test"))
    gts = ground_truths(test_clips)

    base_cfg = cfg.with_(order="none", T_train=1, T_test=1)
    base_model, _ = train(base_cfg, train_clips, [], tmp_path / "baseline", **QUIET)
    base_map, base_dets = evaluate(base_model, test_clips, base_cfg)

    tcm_cfg = cfg.with_(T_train=5, T_test=9)
    tcm_model, _ = train(tcm_cfg, train_clips, [], tmp_path / "tcm", **QUIET)
    sweep = {}
    for t_test in (1, 3, 5, 9):
        m, dets = evaluate(tcm_model, test_clips, tcm_cfg, T_test=t_test)
        sweep[t_test] = (m, dets)
    elapsed = time.perf_counter() - start

    tcm_map, tcm_dets = sweep[9]
    base_low, tcm_low = _recall(base_dets, gts, LOW_BIN), _recall(tcm_dets, gts, LOW_BIN)
    acceptance_report(f"criterion 6: baseline mAP {base_map:.4f}, TCM+SCM (T 5/9) mAP {tcm_map:.4f}, "
                      f"delta {100 * (tcm_map - base_map):+.2f} points (need >= +5)")
    acceptance_report(f"criterion 6: recall visibility {LOW_BIN} baseline {base_low:.4f}, TCM+SCM {tcm_low:.4f}, "
                      f"delta {100 * (tcm_low - base_low):+.2f} points (need >= +10)")
    for t_test, (m, dets) in sweep.items():
        acceptance_report(f"criterion 6 T_test sweep (report only): T_train 5, T_test {t_test}: mAP {m:.4f}, "
                          f"low-visibility recall {_recall(dets, gts, LOW_BIN):.4f}")
    acceptance_report(f"criterion 6: wall clock {elapsed / 60:.1f} min (limit 60)")
    assert tcm_map - base_map >= 0.05
    assert tcm_low - base_low >= 0.10
    assert elapsed <= 3600


@pytest.mark.slow
def test_criterion_06_insertion_point_sweep_report(acceptance_report, tmp_path):
    """Report only, on a reduced budget: 10 training clips, 4 epochs."""
    cfg = RunConfig(num_train=10, epochs=4, decay_epochs=(3, 4))
    train_clips = generate_synthetic(cfg.synth_config("train"))
    test_clips = generate_synthetic(cfg.synth_config("test"))
    for site in InsertionPoint:
        run_cfg = cfg.with_(insertion_point=site.value)
        model, _ = train(run_cfg, train_clips, [], tmp_path / site.value, **QUIET)
        m, _ = evaluate(model, test_clips, run_cfg)
        acceptance_report(f"criterion 6 insertion-point sweep (report only, 10 clips x 4 epochs): "
                          f"{site.value}: mAP {m:.4f}")


# ---------------------------------------------------------------- 7. overfit sanity

def test_criterion_07_overfit_single_snippet():
    cfg = RunConfig(num_train=1, frames_per_clip=3, T_train=3, T_test=3, warmup_iters=0, lr_peak=0.01,
                    decay_epochs=())
    clip = generate_synthetic(cfg.synth_config("train"))[0]
    model = build_detector(cfg)
    opt = ad.SGD(list(model.params.values()), cfg.momentum, cfg.weight_decay)
    snippet = prepare_snippet(clip, 1, cfg, 3)  # no augmentation: the same snippet every step
    anchors = model.anchors(*snippet.frames.shape[-1:-3:-1])
    c = snippet.center
    losses = []
    for _ in range(200):
        total, _, _ = detection_loss(model, snippet.frames, snippet.boxes[c], snippet.labels[c], anchors)
        losses.append(total.item())
        opt.zero_grad()
        total.backward()
        opt.step(cfg.lr_peak, cfg.grad_clip)
    final = detection_loss(model, snippet.frames, snippet.boxes[c], snippet.labels[c], anchors)[0].item()
    assert final <= 0.5 * losses[0], (losses[0], final)
    assert sum(len(b) for b in clip.annotations) > 0
    m, _ = evaluate(model, [clip], cfg)
    assert m >= 0.95, m


# ---------------------------------------------------------------- 8. metric correctness

GT_A, GT_B = (0.0, 0.0, 10.0, 10.0), (0.0, 2.0, 10.0, 12.0)  # IoU 2/3 with each other
BOXES = {"A": GT_A, "B": GT_B, "M": (0.0, 1.0, 10.0, 11.0), "X": (30.0, 30.0, 40.0, 40.0),
         "P": (0.0, 5.0, 10.0, 15.0)}  # M overlaps both; P overlaps A below threshold


def _iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def _sweep_oracle(dets, gts):
    """Independent reference: at every score threshold rematch from scratch, then
    integrate max precision over recall >= r across the distinct recall levels."""
    points = []
    for s in sorted({d.score for d in dets}, reverse=True):
        kept = sorted([(i, d) for i, d in enumerate(dets) if d.score >= s], key=lambda p: (-p[1].score, p[0]))
        free = list(range(len(gts)))
        tp = 0
        for _, d in kept:
            best, best_iou = None, -1.0
            for g in free:
                v = _iou(d.box, gts[g].box)
                if v > best_iou:
                    best, best_iou = g, v
            if best is not None and best_iou >= 0.5:
                free.remove(best)
                tp += 1
        points.append((tp / len(gts), tp / len(kept)))
    ap, prev = 0.0, 0.0
    for r in sorted({r for r, _ in points}):
        ap += (r - prev) * max(p for rr, p in points if rr >= r)
        prev = r
    return ap


def _sets():
    for n in range(0, 11):
        kinds = "AMX" if n > 7 else "ABMX" if n > 5 else "ABMXP"
        for combo in itertools.product(kinds, repeat=n):
            yield [Detection("c", 0, BOXES[k], 0, 1.0 - 0.05 * i) for i, k in enumerate(combo)]
    for n in range(1, 5):  # tied scores on three levels
        for combo in itertools.product("ABMX", repeat=n):
            for levels in itertools.product((0.9, 0.6, 0.3), repeat=n):
                yield [Detection("c", 0, BOXES[k], 0, s) for k, s in zip(combo, levels)]


def test_criterion_08_ap_equals_sweep_oracle_exhaustively():
    gts = [GroundTruth("c", 0, GT_A), GroundTruth("c", 0, GT_B)]
    count = 0
    for dets in _sets():
        got = average_precision(dets, gts).ap
        want = _sweep_oracle(dets, gts) if dets else 0.0
        assert got == want, (dets, got, want)
        count += 1
    assert count > 50000


def test_criterion_08_hand_computed_case():
    gts = [GroundTruth("c", 0, GT_A), GroundTruth("c", 0, (20.0, 20.0, 30.0, 30.0))]
    dets = [Detection("c", 0, GT_A, 0, 0.9), Detection("c", 0, BOXES["X"], 0, 0.8),
            Detection("c", 0, (20.0, 20.0, 30.0, 30.0), 0, 0.7)]
    assert average_precision(dets, gts).ap == pytest.approx(0.8333, abs=5e-5)
    assert average_precision(dets, gts).ap == pytest.approx(0.5 * 1.0 + 0.5 * 2 / 3, abs=1e-15)


# ---------------------------------------------------------------- 9. schedule and determinism

def _schedule_cfg():
    return RunConfig(num_train=1, frames_per_clip=40, width=64, height=64, target_short=64,
                     backbone_channels=(4, 8, 8, 16, 16), head_width=8, head_convs=1, order="none", T_train=1,
                     T_test=1, val_clips=0)


def _closed_form(i, epoch):
    lr = 0.002 + (0.01 - 0.002) * min(i, 500) / 500
    return lr * (0.1 if epoch >= 6 else 1.0) * (0.1 if epoch >= 11 else 1.0)


def test_criterion_09_schedule_and_byte_identical_runs(tmp_path):
    cfg = _schedule_cfg()
    clips = generate_synthetic(cfg.synth_config("train"))
    train(cfg, clips, [], tmp_path / "a", **QUIET)
    train(cfg, clips, [], tmp_path / "b", **QUIET)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    lrs = [lr for e in manifest["epochs"] for lr in e["lr"]]
    assert len(lrs) == 14 * 40
    expected = [_closed_form(i, 1 + i // 40) for i in range(len(lrs))]
    assert max(abs(a - b) for a, b in zip(lrs, expected)) <= 1e-15
    assert lrs[0] == 0.002 and lrs[500] == pytest.approx(0.01 * 0.1 * 0.1, abs=1e-15)  # epoch 13
    assert learning_rate(600, 6, cfg) == pytest.approx(0.001) and learning_rate(600, 11, cfg) == pytest.approx(1e-4)
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "timings.json")
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir() if p.name != "timings.json")
    assert len([n for n in names if n.startswith("checkpoint_")]) == 14
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


# ---------------------------------------------------------------- 10. format roundtrips

def test_criterion_10_annotation_roundtrip(tmp_path):
    clip = generate_synthetic(RunConfig(num_train=1, frames_per_clip=4).synth_config("train"))[0]
    save_clip(clip, tmp_path / clip.id)
    back = load_clip(tmp_path / clip.id)
    assert back.id == clip.id and np.array_equal(back.frames, clip.frames)
    assert back.annotations == clip.annotations
    odd = VideoClip("odd", np.zeros((2, 20, 30, 3), np.uint8),
                    [[Box(0.25, 1.5, 29.99, 19.0, 2, 0.1234)], [Box(1, 2, 3, 4, 0, -1.0)]])
    save_annotations(odd, tmp_path / "odd.txt")
    parsed = load_annotations(tmp_path / "odd.txt")
    assert parsed.frames == odd.annotations and (parsed.width, parsed.height) == (30, 20)


def test_criterion_10_checkpoint_roundtrip(tmp_path):
    model = Detector(blend=BlendConfig(T=5), seed=4)
    state = model.state_dict()
    state["special"] = np.array([[np.inf, -0.0], [np.nan, 5e-324]])
    checkpoint.save(tmp_path / "w.bin", state)
    back = checkpoint.load(tmp_path / "w.bin")
    assert sorted(back) == sorted(state)
    for name, arr in state.items():
        assert back[name].shape == arr.shape and back[name].tobytes() == arr.tobytes()
    assert checkpoint.dumps(back) == (tmp_path / "w.bin").read_bytes()


def test_criterion_10_results_roundtrip():
    rng = np.random.default_rng(10)
    dets = []
    for i in range(500):
        x = np.sort(rng.uniform(-5, 300, 2))
        y = np.sort(rng.uniform(-5, 300, 2))
        dets.append(Detection(f"clip{i % 7}", int(rng.integers(0, 1000)), (x[0], y[0], x[1] + 1e-9, y[1] + 0.1),
                              int(rng.integers(0, 3)), float(rng.random() ** 3)))
    dets.append(Detection("edge", 0, (0.1, 1 / 3, math.pi, 1e10), 0, 5e-324))
    assert parse_results(format_results(dets)) == dets
