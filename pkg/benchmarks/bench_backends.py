"""Time the compiled convolution kernels against the numpy fallback.

Shapes mirror the default network's five convolutions on a 96x96 input
(two stride-2 convs into res2, one into res3, then the two dilated
stages). Each (shape, op) pair reports the best of --repeats timed runs
after one warmup.

Run:  python3 benchmarks/bench_backends.py [--repeats 5] [--batch 4]
"""

import argparse
import time

import numpy as np

from fbnet.kernels import numpy_backend, out_size

try:
    from fbnet.kernels import _native
except ImportError:
    _native = None

# (label, in_ch, out_ch, size, stride, dilation) per default-config conv
SHAPES = [
    ("res2.conv0 s2", 3, 16, 96, 2, 1),
    ("res2.conv1 s2", 16, 16, 48, 2, 1),
    ("res3.conv0 s2", 16, 32, 24, 2, 1),
    ("res4.conv0 d2", 32, 64, 12, 1, 2),
    ("res5.conv0 d4", 64, 64, 12, 1, 4),
]


def time_call(fn, repeats):
    fn()  # warmup
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_backend(impl, batch, repeats, rng):
    rows = {}
    for label, c_in, c_out, size, stride, dilation in SHAPES:
        padding = dilation
        x = rng.standard_normal((batch, c_in, size, size)).astype(np.float32)
        w = rng.standard_normal((c_out, c_in, 3, 3)).astype(np.float32)
        ho = out_size(size, 3, stride, padding, dilation)
        gy = rng.standard_normal((batch, c_out, ho, ho)).astype(np.float32)
        rows[(label, "forward")] = time_call(
            lambda: impl.conv2d_forward(x, w, stride, padding, dilation), repeats
        )
        rows[(label, "grad_in")] = time_call(
            lambda: impl.conv2d_grad_input(gy, w, x.shape, stride, padding, dilation), repeats
        )
        rows[(label, "grad_w")] = time_call(
            lambda: impl.conv2d_grad_weight(gy, x, w.shape, stride, padding, dilation), repeats
        )
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--batch", type=int, default=4)
    args = parser.parse_args()

    if _native is None:
        raise SystemExit(
            "compiled extension not built; run: pip install -e . --no-build-isolation"
        )

    numpy_rows = bench_backend(numpy_backend, args.batch, args.repeats, np.random.default_rng(0))
    native_rows = bench_backend(_native, args.batch, args.repeats, np.random.default_rng(0))

    print(f"batch {args.batch}, best of {args.repeats} runs, times in ms")
    print(f"{'conv':<16} {'op':<8} {'numpy':>8} {'native':>8} {'speedup':>8}")
    totals = [0.0, 0.0]
    for key in numpy_rows:
        n, c = numpy_rows[key] * 1e3, native_rows[key] * 1e3
        totals[0] += n
        totals[1] += c
        print(f"{key[0]:<16} {key[1]:<8} {n:>8.3f} {c:>8.3f} {n / c:>7.2f}x")
    print(f"{'total':<16} {'':<8} {totals[0]:>8.3f} {totals[1]:>8.3f} {totals[0] / totals[1]:>7.2f}x")


if __name__ == "__main__":
    main()
