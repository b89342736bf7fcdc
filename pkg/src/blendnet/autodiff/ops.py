"""Differentiable operations on :class:`Tensor`.

Conv ops accept either a single map ``[C, H, W]`` or a batch ``[N, C, H, W]``.
All arithmetic is float64 with a fixed accumulation order.
"""
import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, as_tensor


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor.from_op(a.data + b.data, "add", (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor.from_op(a.data - b.data, "sub", (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(ad * bd, "mul", (a, b), vjp)


def scale(x, c):
    """Multiply by a Python scalar constant."""
    c = float(c)
    return Tensor.from_op(x.data * c, "scale", (x,), lambda g: (g * c,))


def broadcast_add(x, v):
    """Add a per-channel vector ``v[C]`` to every spatial position of ``x[C, H, W]``."""
    if v.ndim != 1 or x.ndim < 3 or x.shape[-3] != v.shape[0]:
        raise ShapeError(f"broadcast_add: map {x.shape} and vector {v.shape} do not conform")
    return add(x, reshape(v, (v.shape[0], 1, 1)))


def relu(x):
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def sigmoid(x):
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor.from_op(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def exp(x):
    out = np.exp(x.data)
    return Tensor.from_op(out, "exp", (x,), lambda g: (g * out,))


def log(x):
    d = x.data
    return Tensor.from_op(np.log(d), "log", (x,), lambda g: (g / d,))


def power(x, p):
    """Elementwise ``x ** p`` for a constant exponent."""
    p = float(p)
    d = x.data
    out = d ** p

    def vjp(g):
        if p == 0.0:
            return (np.zeros_like(d),)
        return (g * p * d ** (p - 1.0),)

    return Tensor.from_op(out, "power", (x,), vjp)


def clamp(x, lo, hi):
    d = x.data
    inside = (d >= lo) & (d <= hi)
    return Tensor.from_op(np.clip(d, lo, hi), "clamp", (x,), lambda g: (g * inside,))


def abs_(x):
    d = x.data
    return Tensor.from_op(np.abs(d), "abs", (x,), lambda g: (g * np.sign(d),))


def smooth_l1(x, beta):
    """Elementwise smooth-L1: ``x^2/(2 beta)`` inside ``|x| < beta``, else ``|x| - beta/2``."""
    d = x.data
    ad = np.abs(d)
    small = ad < beta
    out = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta)

    def vjp(g):
        return (g * np.where(small, d / beta, np.sign(d)),)

    return Tensor.from_op(out, "smooth_l1", (x,), vjp)


# ---------------------------------------------------------------- reductions

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(sorted(out))


def sum_(x, axes=None):
    axes = _norm_axes(axes, x.ndim)
    shape = x.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def vjp(g):
        return (np.broadcast_to(g.reshape(kept), shape).copy(),)

    return Tensor.from_op(x.data.sum(axis=axes), "sum", (x,), vjp)


def mean_over(x, axes=None):
    axes = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum_(x, axes), 1.0 / count)


def softmax(x, axis=-1):
    """Max-subtracted softmax along one axis."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    d = x.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, "softmax", (x,), vjp)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return Tensor.from_op(out, "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor.from_op(out, "transpose", (x,), lambda g: (g.transpose(inverse),))


def take(x, index, axis=0):
    """Select one index along ``axis`` (dropping it) or an integer array of indices."""
    shape = x.shape
    idx = np.asarray(index)
    out = np.take(x.data, idx, axis=axis)

    def vjp(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        if idx.ndim == 0:
            sl[axis] = int(idx)
            full[tuple(sl)] = g
        else:
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor.from_op(out, "take", (x,), vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: inconsistent shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.from_op(out, "stack", tuple(tensors), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} do not conform") from None
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(out, "concat", tuple(tensors), vjp)


def subsample2(x):
    """Keep every other row and column (the spatial part of a stride-2 1x1 conv)."""
    shape = x.shape
    out = np.ascontiguousarray(x.data[..., ::2, ::2])

    def vjp(g):
        full = np.zeros(shape)
        full[..., ::2, ::2] = g
        return (full,)

    return Tensor.from_op(out, "subsample2", (x,), vjp)


def upsample2(x, out_hw=None):
    """Nearest-neighbour 2x upsampling, optionally cropped to ``out_hw``."""
    d = x.data
    h, w = d.shape[-2:]
    oh, ow = out_hw if out_hw is not None else (2 * h, 2 * w)
    if oh > 2 * h or ow > 2 * w:
        raise ShapeError(f"upsample2: target {(oh, ow)} exceeds 2x of {(h, w)}")
    out = np.ascontiguousarray(d.repeat(2, axis=-2).repeat(2, axis=-1)[..., :oh, :ow])

    def vjp(g):
        full = np.zeros(d.shape[:-2] + (2 * h, 2 * w))
        full[..., :oh, :ow] = g
        full = full.reshape(d.shape[:-2] + (h, 2, w, 2))
        return (full.sum(axis=(-3, -1)),)

    return Tensor.from_op(out, "upsample2", (x,), vjp)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product over the two trailing axes (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul: operands must have rank >= 1")
    ad, bd = a.data, b.data
    k_a = ad.shape[-1]
    k_b = bd.shape[-2] if bd.ndim >= 2 else bd.shape[0]
    if k_a != k_b:
        raise ShapeError(f"matmul: inner dimensions differ for {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def vjp(g):
        a2 = ad if ad.ndim >= 2 else ad[None, :]
        b2 = bd if bd.ndim >= 2 else bd[:, None]
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bd.shape)
        return ga, gb

    return Tensor.from_op(out, "matmul", (a, b), vjp)


def conv1x1(x, w, bias=None):
    """1x1 convolution ``out[c,h,w] = sum_k w[c,k] x[k,h,w]`` (plus optional bias)."""
    if w.ndim != 2 or x.ndim not in (3, 4) or x.shape[-3] != w.shape[1]:
        raise ShapeError(f"conv1x1: input {x.shape} incompatible with weight {w.shape}")
    xd, wd = x.data, w.data
    h, wid = xd.shape[-2:]
    flat = xd.reshape(xd.shape[:-3] + (xd.shape[-3], h * wid))
    out = (wd @ flat).reshape(xd.shape[:-3] + (wd.shape[0], h, wid))
    if bias is not None:
        out += bias.data[:, None, None]
    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gf = g.reshape(flat.shape[:-2] + (wd.shape[0], h * wid))
        gx = (wd.T @ gf).reshape(xd.shape) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = gf @ np.swapaxes(flat, -1, -2)
            if gw.ndim == 3:
                gw = gw.sum(axis=0)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gf.sum(axis=-1).reshape(-1, wd.shape[0]).sum(axis=0) if bias.requires_grad else None)
        return tuple(grads)

    return Tensor.from_op(out, "conv1x1", inputs, vjp)


def conv_out_size(size, stride, pad):
    return (size + 2 * pad - 3) // stride + 1


def conv3x3(x, w, stride=1, pad=1, bias=None):
    """3x3 cross-correlation with the given stride and zero padding."""
    if stride not in (1, 2) or pad not in (0, 1):
        raise ValueError(f"conv3x3: stride must be 1 or 2 and pad 0 or 1, got {stride}, {pad}")
    if w.ndim != 4 or w.shape[2:] != (3, 3) or x.ndim not in (3, 4) or x.shape[-3] != w.shape[1]:
        raise ShapeError(f"conv3x3: input {x.shape} incompatible with weight {w.shape}")
    batched = x.ndim == 4
    xd = np.ascontiguousarray(x.data if batched else x.data[None])
    n, c, h, wid = xd.shape
    oh, ow = conv_out_size(h, stride, pad), conv_out_size(wid, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv3x3: input {x.shape} too small for stride {stride}, pad {pad}")
    span = oh * ow
    cols = np.empty((c * 9, n * span))
    kernels.im2col3x3(xd, pad, stride, oh, ow, cols, 0)
    cout = w.shape[0]
    wmat = w.data.reshape(cout, c * 9)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(cout, n, oh, ow).transpose(1, 0, 2, 3))
    if not batched:
        out = out[0]
    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gm = np.ascontiguousarray(g.reshape(n, cout, span).transpose(1, 0, 2)).reshape(cout, n * span)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im3x3(wmat.T @ gm, 0, n, c, h, wid, pad, stride, oh, ow)
            gx = gx if batched else gx[0]
        gw = (gm @ cols.T).reshape(w.shape) if w.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(gm.sum(axis=1) if bias.requires_grad else None)
        return tuple(grads)

    return Tensor.from_op(out, "conv3x3", inputs, vjp)


def conv3x3_levels(x, sizes, w, bias=None):
    """Stride-1, pad-1 3x3 conv applied to several maps with shared weights.

    ``x`` is ``[C, sum(h*w)]``: the maps of ``sizes = [(h, w), ...]`` flattened
    and concatenated along the last axis. Returns ``[C_out, sum(h*w)]`` in the
    same layout. One matrix product covers every map.
    """
    sizes = [(int(h), int(wd)) for h, wd in sizes]
    total = sum(h * wd for h, wd in sizes)
    if x.ndim != 2 or x.shape[1] != total or w.ndim != 4 or w.shape[1:] != (x.shape[0], 3, 3):
        raise ShapeError(f"conv3x3_levels: input {x.shape} with sizes {sizes} incompatible with weight {w.shape}")
    c, cout = x.shape[0], w.shape[0]
    cols = np.empty((c * 9, total))
    offsets = []
    off = 0
    for h, wd in sizes:
        offsets.append(off)
        level = np.ascontiguousarray(x.data[:, off:off + h * wd]).reshape(1, c, h, wd)
        kernels.im2col3x3(level, 1, 1, h, wd, cols, off)
        off += h * wd
    wmat = w.data.reshape(cout, c * 9)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gx = None
        if x.requires_grad:
            gcols = np.ascontiguousarray(wmat.T @ g)
            gx = np.empty((c, total))
            for (h, wd), o in zip(sizes, offsets):
                gx[:, o:o + h * wd] = kernels.col2im3x3(gcols, o, 1, c, h, wd, 1, 1, h, wd).reshape(c, h * wd)
        gw = (g @ cols.T).reshape(w.shape) if w.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=1) if bias.requires_grad else None)
        return tuple(grads)

    return Tensor.from_op(out, "conv3x3_levels", inputs, vjp)
