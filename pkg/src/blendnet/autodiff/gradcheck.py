"""Central finite-difference gradient checks."""
import numpy as np

from .tensor import pin_stop_gradients


def relative_error(analytic, numeric, floor=1e-7):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from blowing up."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numeric_grad(fn, array, indices, eps=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. ``array.flat[indices]`` (mutated in place)."""
    flat = array.reshape(-1)
    out = np.empty(len(indices))
    for n, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn()
        flat[i] = orig - eps
        f_minus = fn()
        flat[i] = orig
        out[n] = (f_plus - f_minus) / (2.0 * eps)
    return out


def check_gradients(loss_fn, tensors, eps=1e-5, max_entries=None, rng=None, floor=1e-7, pinned=False):
    """Compare autodiff gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` builds and returns a fresh scalar Tensor each call. For each
    tensor, up to ``max_entries`` randomly chosen entries are probed.
    With ``pinned`` every ``stop_gradient`` output is held at its value from
    the unperturbed pass, so the differences follow the same paths as the
    analytic gradient. Returns the worst relative error seen.
    """
    if pinned:
        with pin_stop_gradients() as pin:
            def replay():
                pin.rewind()
                return loss_fn()

            loss_fn()
            pin.freeze()
            return check_gradients(replay, tensors, eps, max_entries, rng, floor)
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def value():
        return float(loss_fn().data)

    worst = 0.0
    for t, a in zip(tensors, analytic):
        size = t.data.size
        if max_entries is None or size <= max_entries:
            idx = np.arange(size)
        else:
            idx = rng.choice(size, size=max_entries, replace=False)
        num = numeric_grad(value, t.data, idx, eps)
        for n, i in enumerate(idx):
            worst = max(worst, relative_error(a.reshape(-1)[i], num[n], floor))
    return worst


def pinned_sensitivity(loss_fn, array, indices, eps=1e-5):
    """Finite differences with every ``stop_gradient`` held at its reference value.

    Measures how ``loss_fn()`` responds to ``array`` through gradient-carrying
    paths only; an input reaching the loss solely via stop_gradient gives 0.
    """
    with pin_stop_gradients() as pin:
        loss_fn()
        pin.freeze()

        def value():
            pin.rewind()
            return float(loss_fn().data)

        return numeric_grad(value, array, indices, eps)
