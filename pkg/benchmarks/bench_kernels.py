"""Compare the compiled and numpy im2col/col2im backends on detector-sized shapes.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json PATH]
"""
import argparse
import json
import timeit

import numpy as np

from blendnet.autodiff.kernels import backends
from blendnet.autodiff.ops import conv_out_size

# (batch, channels, height, width, stride): backbone stages, a T=5 snippet, and a head-sized map
SHAPES = [
    (5, 3, 128, 128, 2),
    (5, 16, 64, 64, 2),
    (5, 32, 32, 32, 2),
    (1, 64, 16, 16, 1),
    (1, 64, 8, 8, 1),
]


def bench(im2col, col2im, n, c, h, w, stride, repeat):
    oh, ow = conv_out_size(h, stride, 1), conv_out_size(w, stride, 1)
    x = np.random.default_rng(0).standard_normal((n, c, h, w))
    cols = np.empty((c * 9, n * oh * ow))

    def fwd():
        im2col(x, 1, stride, oh, ow, cols, 0)

    def bwd():
        col2im(cols, 0, n, c, h, w, 1, stride, oh, ow)

    fwd()
    number = max(1, int(0.05 / max(timeit.timeit(fwd, number=1), 1e-7)))
    t_fwd = min(timeit.repeat(fwd, number=number, repeat=repeat)) / number
    t_bwd = min(timeit.repeat(bwd, number=number, repeat=repeat)) / number
    return t_fwd, t_bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the timings here")
    args = parser.parse_args()

    found = backends()
    rows = []
    print(f"{'shape (N,C,H,W,s)':<24}" + "".join(f"{name + ' fwd/bwd ms':>26}" for name in found)
          + ("   speed-up" if "compiled" in found else ""))
    for shape in SHAPES:
        times = {name: bench(*fns, *shape, args.repeat) for name, fns in found.items()}
        cells = "".join(f"{1e3 * f:>13.3f}{1e3 * b:>13.3f}" for f, b in times.values())
        extra = ""
        if "compiled" in times:
            py, cc = times["python"], times["compiled"]
            extra = f"   {py[0] / cc[0]:.1f}x / {py[1] / cc[1]:.1f}x"
        print(f"{str(shape):<24}{cells}{extra}")
        rows.append({"shape": shape, **{f"{k}_ms": [1e3 * v for v in t] for k, t in times.items()}})
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
