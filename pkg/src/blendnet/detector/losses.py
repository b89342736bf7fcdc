"""Focal classification loss and smooth-L1 box regression loss."""
import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .targets import IGNORE

PROB_EPS = 1e-12


def focal_loss(probs, labels, alpha=0.25, gamma=2.0, num_classes=None):
    """Sigmoid focal loss summed over anchors and classes.

    ``probs`` is a Tensor ``[N, A]`` of per-class probabilities; ``labels`` an
    int array ``[N]`` (class id, background, or ignore). Ignored anchors are
    excluded and the sum is divided by the foreground count (at least 1).
    """
    labels = np.asarray(labels)
    n, a = probs.shape
    if num_classes is not None and a != num_classes:
        raise ValueError(f"expected {num_classes} classes, got {a}")
    onehot = np.zeros((n, a))
    fg = labels >= 0
    onehot[np.nonzero(fg)[0], labels[fg]] = 1.0
    valid = (labels != IGNORE).astype(np.float64)[:, None]
    alpha_t = np.where(onehot == 1.0, alpha, 1.0 - alpha) * valid
    p = ad.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    # p_t = p for positives, 1 - p for negatives
    p_t = ad.add(ad.mul(p, Tensor(2.0 * onehot - 1.0)), Tensor(1.0 - onehot))
    modulating = ad.power(ad.sub(1.0, p_t), gamma)
    per_entry = ad.mul(ad.mul(modulating, ad.log(p_t)), Tensor(-alpha_t))
    return ad.scale(ad.sum_(per_entry), 1.0 / max(1, int(fg.sum())))


def box_loss(deltas, labels, box_targets, beta=1.0 / 9):
    """Smooth-L1 over the foreground anchors' four offsets, averaged per anchor."""
    labels = np.asarray(labels)
    fg = np.nonzero(labels >= 0)[0]
    if len(fg) == 0:
        return ad.scale(ad.sum_(deltas), 0.0)
    diff = ad.sub(ad.take(deltas, fg, axis=0), Tensor(np.asarray(box_targets)[fg]))
    return ad.scale(ad.sum_(ad.smooth_l1(diff, beta)), 1.0 / len(fg))
