"""Quick built-in checks: loop oracles, attention normalisation, gradients and AP."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import oracles
from .autodiff import Tensor
from .autodiff.gradcheck import check_gradients, pinned_sensitivity
from .blend import EmbeddingStrategy, ScmWeights, TcmWeights, scm_forward, spatial_attention, tcm_forward, \
    temporal_softmax
from .evaluation import Detection, GroundTruth, average_precision


def _frames(rng, T, c, h, w, grad=False):
    return [Tensor(rng.standard_normal((c, h, w)), requires_grad=grad) for _ in range(T)]


def check_oracles(cases=25, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        T = int(rng.choice([1, 3, 5]))
        c, h, w = (int(v) for v in rng.integers(1, 6, size=3))
        xs = _frames(rng, T, c, h, w)
        scm = ScmWeights.init(c, 1, rng=rng, std=1.0)
        ref = oracles.scm_loop(xs[0].data.tolist(), scm.w1.data.tolist(), scm.w2.data.tolist(), scm.w3.data.tolist())
        worst = max(worst, float(np.max(np.abs(scm_forward(xs[0], scm).data - np.array(ref)))))
        tcm = TcmWeights.init(c, T, rng=rng, std=0.5)
        w4s, w5s, w6s = tcm.resolve(T)
        ref = oracles.tcm_loop([x.data.tolist() for x in xs], [a.data.tolist() for a in w4s],
                               [a.data.tolist() for a in w5s], [a.data.tolist() for a in w6s])
        worst = max(worst, float(np.max(np.abs(tcm_forward(xs, tcm).data - np.array(ref)))))
    return worst <= 1e-10, f"max abs diff {worst:.3g} over {cases} cases"


def check_normalisation(cases=200, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        T, c, h, w = (int(v) for v in rng.integers(1, 7, size=4))
        scale = 10.0 ** rng.uniform(-2, 2)
        weights = temporal_softmax(Tensor(scale * rng.standard_normal((T, h, w)))).data
        worst = max(worst, float(np.max(np.abs(weights.sum(axis=0) - 1.0))))
        alpha = spatial_attention(Tensor(scale * rng.standard_normal((c, h, w))),
                                  ScmWeights.init(c, 1, rng=rng, std=1.0)).data
        worst = max(worst, abs(float(alpha.sum()) - 1.0))
    return worst <= 1e-12, f"max deviation from 1: {worst:.3g}"


def check_gradients_ops(seed=2):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 3, 5, 6)), requires_grad=True)
    w = Tensor(0.3 * rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    probe = Tensor(rng.standard_normal((1, 4, 3, 3)))
    worst = check_gradients(lambda: ad.sum_(ad.mul(ad.sigmoid(ad.conv3x3(x, w, 2, 1, b)), probe)), [x, w, b])
    tcm = TcmWeights.init(3, 3, rng=rng, std=0.5)
    xs = _frames(rng, 3, 3, 2, 3, grad=True)
    probe = Tensor(rng.standard_normal((3, 2, 3)))
    worst = max(worst, check_gradients(
        lambda: ad.sum_(ad.mul(tcm_forward(xs, tcm, EmbeddingStrategy.POSITIONAL), probe)),
        list(tcm.named().values()) + xs))
    return worst < 1e-4, f"worst relative error {worst:.3g}"


def check_gradient_blocking(seed=3):
    rng = np.random.default_rng(seed)
    tcm = TcmWeights.init(3, 3, rng=rng, std=0.5)
    xs = _frames(rng, 3, 3, 2, 2)
    probe = Tensor(rng.standard_normal((3, 2, 2)))
    idx = np.arange(xs[0].data.size)

    def sens(strategy):
        fn = lambda: ad.sum_(ad.mul(tcm_forward(xs, tcm, strategy), probe))  # noqa: E731
        return float(np.max(np.abs(pinned_sensitivity(fn, xs[0].data, idx))))

    blocked, open_ = sens(EmbeddingStrategy.MAIN_AND_REFS), sens(EmbeddingStrategy.POSITIONAL)
    return blocked <= 1e-9 and open_ > 1e-6, f"main_and_refs {blocked:.3g}, positional {open_:.3g}"


def check_ap():
    gts = [GroundTruth("c", 0, (0, 0, 10, 10)), GroundTruth("c", 0, (20, 20, 30, 30))]
    dets = [Detection("c", 0, (0, 0, 10, 10), 0, 0.9), Detection("c", 0, (50, 50, 60, 60), 0, 0.8),
            Detection("c", 0, (20, 20, 30, 30), 0, 0.7)]
    ap = average_precision(dets, gts).ap
    return abs(ap - (0.5 + 0.5 * 2 / 3)) < 1e-12, f"AP {ap:.6f}"


CHECKS = (
    ("oracle equivalence", check_oracles),
    ("attention normalisation", check_normalisation),
    ("finite-difference gradients", check_gradients_ops),
    ("reference gradient blocking", check_gradient_blocking),
    ("average precision", check_ap),
)


def run(log=print):
    """Run every check, logging one line each; returns True when all pass."""
    ok = True
    for name, fn in CHECKS:
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash counts as a failure, not an abort
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        log(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok = ok and passed
    return ok
