"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--threads 1]

Times im2col/col2im, pooling and bilinear resampling on decoder-sized maps,
plus one full desk-preset training step, under each available backend.
"""
import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from ctdnet import _core
from ctdnet.losses import total_loss
from ctdnet.model import CTDNet, VariantConfig
from ctdnet.nn import init
from ctdnet.tensor import Tensor
from ctdnet.tensor import functional as F


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 64, 48, 48)).astype(np.float32)
    k = _core.get_backend
    ho = wo = 48
    cols = None

    def im2col(name):
        nonlocal cols
        cols = k(name).im2col(x, 3, 1, 1, ho, wo)

    def col2im(name):
        k(name).col2im(cols, 64, 48, 48, 3, 1, 1, ho, wo)

    def maxpool(name):
        k(name).max_pool_forward(x, 3, 2, 1, 24, 24)

    def avgpool(name):
        k(name).avg_pool_forward(x, 7, 1, 3, 48, 48)

    lo, hi, frac = F.bilinear_coefficients(12, 48, np.float32)
    small = x[:, :, :12, :12].copy()

    def bilinear(name):
        k(name).bilinear_forward(small, lo, hi, frac, lo, hi, frac)

    init.seed(0)
    model = CTDNet(VariantConfig.preset("M", backbone="tiny", input_size=96))
    images = Tensor(rng.random((4, 3, 96, 96)))
    masks = (rng.random((4, 1, 96, 96)) > 0.5).astype(np.float32)

    def train_step(name):
        previous = _core.use_backend(name)
        try:
            model.zero_grad()
            total_loss(model(images), masks, masks).backward()
        finally:
            _core.use_backend(previous)

    return [("im2col 3x3", im2col), ("col2im 3x3", col2im), ("max pool 3/2", maxpool),
            ("avg pool 7/1", avgpool), ("bilinear x4", bilinear), ("train step (desk)", train_step)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    backends = _core.available_backends()
    with threadpool_limits(args.threads):
        print(f"{'case':<20}" + "".join(f"{b:>12}" for b in backends) + ("     speed-up" if len(backends) > 1 else ""))
        for label, fn in cases():
            times = [best_of(lambda b=b: fn(b), args.repeat) for b in backends]
            row = f"{label:<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
            if len(times) > 1:
                row += f"  {times[0] / times[1]:>10.2f}x"
            print(row)


if __name__ == "__main__":
    main()
