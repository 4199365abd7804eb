"""Compare the compiled and numpy training kernels.

Times a full training epoch and a single loss/gradient evaluation for a few
model sizes and batch sizes, checks the two backends agree, and prints a
markdown table::

    python benchmarks/bench_kernels.py [--repeats 5] [--rows 2507]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from plr import _fallback
from plr.losses import AGG_CODES, LOSS_CODES
from plr.model import init_model
from plr.numeric import make_rng

try:
    from plr import _kernels
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None

CASES = [
    ("mlp", 256, "min_loss"),
    ("mlp", 256, "weighted"),
    ("mlp", 32, "min_loss"),
    ("linear", 256, "avg_loss"),
]


def _problem(kind: str, rows: int, d: int = 10, k: int = 5):
    rng = make_rng(0)
    model = init_model(kind, d, rng)
    X = rng.normal(size=(rows, d))
    cands = rng.uniform(1, 29, size=(rows, k))
    return model, X, cands, cands[:, 0].copy()


def time_epoch(mod, kind, batch, agg, rows, repeats):
    model, X, C, y = _problem(kind, rows)
    perm = make_rng(1).permutation(rows)
    times = []
    for _ in range(repeats):
        theta = model.theta.copy()
        m, v = np.zeros_like(theta), np.zeros_like(theta)
        t0 = time.perf_counter()
        mod.train_epoch(theta, m, v, 0, 1e-3, model.dims, X, C, y, perm, batch,
                        AGG_CODES[agg], LOSS_CODES["mse"], 1.0, 0.5, 100.0)  # fmt: skip
        times.append(time.perf_counter() - t0)
    return statistics.median(times), theta


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--rows", type=int, default=2507, help="training rows (Abalone train split size)")
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled kernels are not built; only the numpy backend is available")
        return 1
    print("| model | batch | aggregation | cython ms/epoch | numpy ms/epoch | speedup | max param diff |")
    print("|---|---|---|---|---|---|---|")
    for kind, batch, agg in CASES:
        tc, theta_c = time_epoch(_kernels, kind, batch, agg, args.rows, args.repeats)
        tp, theta_p = time_epoch(_fallback, kind, batch, agg, args.rows, args.repeats)
        diff = float(np.max(np.abs(theta_c - theta_p)))
        print(f"| {kind} | {batch} | {agg} | {1e3 * tc:.2f} | {1e3 * tp:.2f} | {tp / tc:.2f}x | {diff:.1e} |")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
