"""Naive loop implementations used as independent reference oracles.

Deliberately written position-by-position in plain Python with no shared
code with the vectorised paths; only meant for tiny shapes.
"""
import math


def _zeros(*shape):
    if len(shape) == 1:
        return [0.0] * shape[0]
    return [_zeros(*shape[1:]) for _ in range(shape[0])]


def matmul_loop(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = _zeros(n, m)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for q in range(k):
                s += a[i][q] * b[q][j]
            out[i][j] = s
    return out


def conv1x1_loop(x, w):
    cin, h, wid = len(x), len(x[0]), len(x[0][0])
    cout = len(w)
    out = _zeros(cout, h, wid)
    for c in range(cout):
        for y in range(h):
            for z in range(wid):
                s = 0.0
                for k in range(cin):
                    s += w[c][k] * x[k][y][z]
                out[c][y][z] = s
    return out


def conv3x3_loop(x, w, stride=1, pad=1, bias=None):
    cin, h, wid = len(x), len(x[0]), len(x[0][0])
    cout = len(w)
    oh = (h + 2 * pad - 3) // stride + 1
    ow = (wid + 2 * pad - 3) // stride + 1
    out = _zeros(cout, oh, ow)
    for c in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                s = 0.0 if bias is None else bias[c]
                for k in range(cin):
                    for ky in range(3):
                        for kx in range(3):
                            iy = oy * stride + ky - pad
                            ix = ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < wid:
                                s += w[c][k][ky][kx] * x[k][iy][ix]
                out[c][oy][ox] = s
    return out


def softmax_loop(values):
    top = max(values)
    e = [math.exp(v - top) for v in values]
    total = sum(e)
    return [v / total for v in e]


def _embed(wrow, x, y, z):
    s = 0.0
    for k in range(len(wrow)):
        s += wrow[k] * x[k][y][z]
    return s


def scm_loop(x, w1, w2, w3):
    """Spatial context module evaluated one context position at a time."""
    c, h, wid = len(x), len(x[0]), len(x[0][0])
    positions = [(y, z) for y in range(h) for z in range(wid)]
    logits = [_embed(w1[0], x, y, z) for y, z in positions]
    top = max(logits)
    denom = sum(math.exp(a - top) for a in logits)
    ce = len(w2)
    context = [0.0] * ce
    for j, (y, z) in enumerate(positions):
        alpha = math.exp(logits[j] - top) / denom
        for e in range(ce):
            context[e] += alpha * _embed(w2[e], x, y, z)
    delta = [sum(w3[ch][e] * context[e] for e in range(ce)) for ch in range(c)]
    return [[[x[ch][y][z] + delta[ch] for z in range(wid)] for y in range(h)] for ch in range(c)]


def temporal_softmax_loop(embed):
    T, h, wid = len(embed), len(embed[0]), len(embed[0][0])
    out = _zeros(T, h, wid)
    for y in range(h):
        for z in range(wid):
            col = softmax_loop([embed[m][y][z] for m in range(T)])
            for m in range(T):
                out[m][y][z] = col[m]
    return out


def attention_map_loop(weights, t):
    """Direct double loop: ``(1/HW) * C[t,i] * sum_j C[t,j]``."""
    frame = weights[t]
    h, wid = len(frame), len(frame[0])
    hw = h * wid
    out = _zeros(h, wid)
    for y in range(h):
        for z in range(wid):
            total = 0.0
            for yy in range(h):
                for zz in range(wid):
                    total += frame[yy][zz]
            out[y][z] = frame[y][z] * total / hw
    return out


def tcm_loop(xs, w4s, w5s, w6s):
    """Temporal context module, one position and one frame at a time."""
    T = len(xs)
    t = T // 2
    c, h, wid = len(xs[0]), len(xs[0][0]), len(xs[0][0][0])
    embed = [[[_embed(w4s[m][0], xs[m], y, z) for z in range(wid)] for y in range(h)] for m in range(T)]
    weights = temporal_softmax_loop(embed)
    out = [[[xs[t][ch][y][z] for z in range(wid)] for y in range(h)] for ch in range(c)]
    for m in range(T):
        attn = attention_map_loop(weights, m)
        context = [0.0] * c
        for y in range(h):
            for z in range(wid):
                for ch in range(c):
                    context[ch] += attn[y][z] * xs[m][ch][y][z]
        shift = [sum(w5s[m][ch][k] * context[k] for k in range(c)) for ch in range(c)]
        for y in range(h):
            for z in range(wid):
                inner = [xs[m][k][y][z] + shift[k] for k in range(c)]
                for ch in range(c):
                    out[ch][y][z] += sum(w6s[m][ch][k] * inner[k] for k in range(c))
    return out
