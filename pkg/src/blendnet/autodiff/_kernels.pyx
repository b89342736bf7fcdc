# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled 3x3 patch kernels (im2col / col2im) for the conv ops.

Same column layout and implicit zero padding as ``_kernels_py``. Results are
bit-identical: col2im adds kernel taps in (ky, kx) order for every element.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col3x3(const double[:, :, :, ::1] x, Py_ssize_t pad, Py_ssize_t stride,
              Py_ssize_t out_h, Py_ssize_t out_w, double[:, ::1] cols, Py_ssize_t offset):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, ky, kx, oy, ox, iy, ix, row, col
    with nogil:
        for ch in range(c):
            for ky in range(3):
                for kx in range(3):
                    row = ch * 9 + ky * 3 + kx
                    col = offset
                    for b in range(n):
                        for oy in range(out_h):
                            iy = oy * stride + ky - pad
                            if iy < 0 or iy >= h:
                                for ox in range(out_w):
                                    cols[row, col + ox] = 0.0
                            else:
                                for ox in range(out_w):
                                    ix = ox * stride + kx - pad
                                    if ix < 0 or ix >= w:
                                        cols[row, col + ox] = 0.0
                                    else:
                                        cols[row, col + ox] = x[b, ch, iy, ix]
                            col = col + out_w


def col2im3x3(const double[:, ::1] cols, Py_ssize_t offset, Py_ssize_t n, Py_ssize_t channels,
              Py_ssize_t h, Py_ssize_t w, Py_ssize_t pad, Py_ssize_t stride,
              Py_ssize_t out_h, Py_ssize_t out_w):
    out = np.zeros((n, channels, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] g = out
    cdef Py_ssize_t b, ch, ky, kx, oy, ox, iy, ix, row, col
    with nogil:
        for ch in range(channels):
            for ky in range(3):
                for kx in range(3):
                    row = ch * 9 + ky * 3 + kx
                    col = offset
                    for b in range(n):
                        for oy in range(out_h):
                            iy = oy * stride + ky - pad
                            if iy >= 0 and iy < h:
                                for ox in range(out_w):
                                    ix = ox * stride + kx - pad
                                    if ix >= 0 and ix < w:
                                        g[b, ch, iy, ix] += cols[row, col + ox]
                            col = col + out_w
    return out
