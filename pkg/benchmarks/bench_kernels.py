"""Benchmark the compiled kernels against the pure-numpy fallback.

Covers both LSTM regimes (narrow steps, where the compiled loop wins on
call overhead, and wide steps, where numpy's SIMD transcendentals win),
the nearest-centroid scan, and the end-to-end enhancement path as shipped
(compiled backend with width dispatch) against the forced-pure fallback.

Run: `python benchmarks/bench_kernels.py` (add --quick for smaller sizes).
"""

import argparse
import time

import numpy as np

import se2units._kernels as kernels
from se2units._kernels import pure
from se2units.audio import AudioBuffer, StftConfig
from se2units.gridnet import GridNetConfig, enhance, init_random_weights

try:
    from se2units._kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def row(name, pure_s, compiled_s):
    if compiled_s is None:
        print(f"{name:<44} {pure_s * 1e3:>9.2f} ms {'n/a':>12} {'n/a':>9}")
    else:
        print(f"{name:<44} {pure_s * 1e3:>9.2f} ms {compiled_s * 1e3:>9.2f} ms "
              f"{pure_s / compiled_s:>8.2f}x")


def bench_lstm(seq_len, batch, hidden, repeats):
    rng = np.random.default_rng(0)
    x_proj = rng.standard_normal((seq_len, batch, 4 * hidden))
    w_hh_t = rng.standard_normal((hidden, 4 * hidden))
    pure_s = timeit(lambda: pure.lstm_batch(x_proj, w_hh_t), repeats)
    compiled_s = (timeit(lambda: _core.lstm_batch(x_proj, w_hh_t), repeats)
                  if _core else None)
    row(f"lstm_batch ({seq_len}x{batch}x{hidden})", pure_s, compiled_s)


def bench_nearest(quick, repeats):
    n, k, d = (5000, 100, 40) if quick else (50000, 100, 40)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((n, d))
    c = rng.standard_normal((k, d))
    pure_s = timeit(lambda: pure.nearest_centroid(x, c), repeats)
    compiled_s = timeit(lambda: _core.nearest_centroid(x, c), repeats) if _core else None
    row(f"nearest_centroid ({n}x{d}, k={k})", pure_s, compiled_s)


def bench_forward(quick, repeats):
    cfg = GridNetConfig(channels=8, num_blocks=2, hidden=32, heads=2,
                        stft=StftConfig(512, 256))
    weights = init_random_weights(cfg, seed=2, scale=0.1)
    rng = np.random.default_rng(3)
    buf = AudioBuffer(rng.uniform(-0.5, 0.5, 8000 if quick else 16000), 16000)

    shipped = (kernels.lstm_batch, kernels.nearest_centroid)
    try:
        kernels.lstm_batch, kernels.nearest_centroid = (
            pure.lstm_batch, pure.nearest_centroid)
        pure_s = timeit(lambda: enhance(buf, weights, cfg), repeats)
        kernels.lstm_batch, kernels.nearest_centroid = shipped
        shipped_s = (timeit(lambda: enhance(buf, weights, cfg), repeats)
                     if _core else None)
    finally:
        kernels.lstm_batch, kernels.nearest_centroid = shipped
    row(f"enhance ({len(buf.samples) / 16000:.0f}s audio, D=8 B=2 h=32) "
        f"[dispatched]", pure_s, shipped_s)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if _core is None:
        print("compiled kernels not available; timing the fallback only\n")
    print(f"{'kernel':<44} {'pure':>12} {'compiled':>12} {'speedup':>9}")
    print("-" * 82)
    bench_lstm(257, 1, 16, args.repeats)            # narrow: compiled regime
    bench_lstm(129 if args.quick else 257, 30 if args.quick else 62,
               64 if args.quick else 128, args.repeats)   # wide: numpy regime
    bench_nearest(args.quick, args.repeats)
    bench_forward(args.quick, args.repeats)


if __name__ == "__main__":
    main()
