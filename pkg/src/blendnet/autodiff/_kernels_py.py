"""Pure numpy fallback for the 3x3 patch kernels.

Must stay bit-identical to the compiled ``_kernels`` extension: im2col is a
pure copy, and col2im accumulates the nine kernel taps in (ky, kx) order so
every output element sees its additions in the same sequence.

Column layout: row ``c*9 + ky*3 + kx``, column ``offset + (b*out_h + oy)*out_w + ox``.
Zero padding is implicit; taps falling outside the input read as 0.
"""
import numpy as np


def _valid(k, pad, stride, out_n, size):
    """Output index range whose tap ``k`` lands inside ``[0, size)``, plus the first input index."""
    lo = 0
    while lo * stride + k - pad < 0:
        lo += 1
    hi = out_n
    while hi > lo and (hi - 1) * stride + k - pad >= size:
        hi -= 1
    return lo, hi, lo * stride + k - pad


def im2col3x3(x, pad, stride, out_h, out_w, cols, offset):
    """Unfold ``x[N, C, H, W]`` into ``cols[C*9, :]`` starting at column ``offset``."""
    n, c, h, w = x.shape
    span = n * out_h * out_w
    view = cols[:, offset:offset + span].reshape(c, 3, 3, n, out_h, out_w)
    xt = x.transpose(1, 0, 2, 3)
    for ky in range(3):
        y0, y1, iy = _valid(ky, pad, stride, out_h, h)
        for kx in range(3):
            x0, x1, ix = _valid(kx, pad, stride, out_w, w)
            tap = view[:, ky, kx]
            if y0 > 0 or y1 < out_h or x0 > 0 or x1 < out_w:
                tap[...] = 0.0
            if y1 > y0 and x1 > x0:
                tap[:, :, y0:y1, x0:x1] = xt[:, :, iy:iy + stride * (y1 - y0 - 1) + 1:stride,
                                             ix:ix + stride * (x1 - x0 - 1) + 1:stride]


def col2im3x3(cols, offset, n, channels, h, w, pad, stride, out_h, out_w):
    """Adjoint of :func:`im2col3x3`: fold columns back into ``[N, C, H, W]``."""
    span = n * out_h * out_w
    view = cols[:, offset:offset + span].reshape(channels, 3, 3, n, out_h, out_w)
    gt = np.zeros((channels, n, h, w), dtype=np.float64)
    for ky in range(3):
        y0, y1, iy = _valid(ky, pad, stride, out_h, h)
        for kx in range(3):
            x0, x1, ix = _valid(kx, pad, stride, out_w, w)
            if y1 > y0 and x1 > x0:
                gt[:, :, iy:iy + stride * (y1 - y0 - 1) + 1:stride,
                   ix:ix + stride * (x1 - x0 - 1) + 1:stride] += view[:, ky, kx, :, y0:y1, x0:x1]
    return np.ascontiguousarray(gt.transpose(1, 0, 2, 3))
