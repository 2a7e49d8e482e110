"""Timing comparison of the compiled kernel backend against the NumPy fallback.

Runs each hot kernel on both backends over a few batch shapes and prints
per-op medians plus the speedup ratio. The compiled extension must be built
for the comparison to mean anything; if it is missing the script says so
and exits.

Usage:
    python3 bench/bench_kernels.py [--repeats 50] [--dtype float32]
"""

import argparse
import statistics
import time

import numpy as np

from tabphrase.numcore.kernels import BACKEND, fallback

try:
    from tabphrase.numcore.kernels import _speedups as compiled
except ImportError:
    compiled = None

# first two mirror real training steps (attention rows are seq-length wide,
# layernorm rows are model_dim wide); the rest probe scaling
SHAPES = [(2048, 8), (512, 32), (512, 64), (2048, 128), (8192, 256)]


def _time(fn, *args, repeats: int) -> float:
    fn(*args)  # warm up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _cases(rows: int, dim: int, dtype):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, dim)).astype(dtype)
    y = fallback.softmax_lastaxis(x)
    dy = rng.normal(size=(rows, dim)).astype(dtype)
    x_hat, rstd = fallback.layernorm_lastaxis(x, 1e-5)
    flat = rng.normal(size=rows * dim).astype(dtype)
    grad = rng.normal(size=rows * dim).astype(dtype)
    adam_args = (flat.copy(), grad, np.zeros_like(flat), np.zeros_like(flat),
                 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return [
        ("softmax_lastaxis", (x,)),
        ("softmax_grad", (y, dy)),
        ("layernorm_lastaxis", (x, 1e-5)),
        ("layernorm_grad", (x_hat, rstd, dy)),
        ("adam_update", adam_args),
    ]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args()

    if compiled is None:
        print("compiled extension not importable; build it first "
              "(pip install -e . --no-build-isolation)")
        return 1
    print(f"active backend at import time: {BACKEND}")
    print(f"dtype {args.dtype}, {args.repeats} repeats, median wall time\n")

    header = f"{'kernel':>18} {'shape':>12} {'python':>11} {'compiled':>11} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    dtype = np.dtype(args.dtype)
    for rows, dim in SHAPES:
        for name, call_args in _cases(rows, dim, dtype):
            t_py = _time(getattr(fallback, name), *call_args, repeats=args.repeats)
            t_c = _time(getattr(compiled, name), *call_args, repeats=args.repeats)
            print(f"{name:>18} {f'{rows}x{dim}':>12} {t_py * 1e3:>10.3f}ms "
                  f"{t_c * 1e3:>10.3f}ms {t_py / t_c:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
