"""Compare the compiled and numpy kernels, and full against pruned inference.

    python3 benchmarks/bench_backends.py [--heights 64 128 256] [--repeat 3]

Each row reports the median wall time per column of ``infer_column`` on a
synthetic column (sloped road, an object, sky) with mild noise. The pruned
rows use ``generate_cuts``; the ``energy gap`` column is pruned minus exact
energy and is never negative.
"""
import argparse
import statistics
import time

import numpy as np

from slanted_stixels import _backend
from slanted_stixels.cuts import cut_density, generate_cuts
from slanted_stixels.energy import ColumnMeasurements, ColumnPrefix
from slanted_stixels.infer import infer_column
from slanted_stixels.model import ModelConfig, default_taxonomy


def make_column(h, rng):
    v = np.arange(h)
    d = 40.0 - 35.0 * v / h
    obj = (v >= h // 5) & (v < h // 2)
    d[obj] = d[h // 5]
    d[v >= 3 * h // 4] = -1.0
    d = np.where(d >= 0, d + rng.normal(0, 0.3, h), -1.0)
    labels = np.where(obj, 3, np.where(v >= 3 * h // 4, 5, 0))
    scores = np.full((h, 6), 0.02)
    scores[v, labels] = 0.9
    return ColumnMeasurements.from_scores(d, scores)


def timed(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return out, statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--heights", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    config = ModelConfig()
    taxonomy = default_taxonomy()
    print(f"{'backend':<8}{'h':>6}{'mode':>8}{'density':>9}{'ms/col':>11}{'speedup':>9}{'energy gap':>12}")
    for h in args.heights:
        col = make_column(h, rng)
        prefix = ColumnPrefix.build(col, config, taxonomy)
        cuts = generate_cuts(col, taxonomy)
        ref = None
        for name in _backend.available()[::-1]:
            kernels = _backend.get(name)
            exact, t_full = timed(lambda: infer_column(col, prefix, config, None, backend=kernels), args.repeat)
            pruned, t_fast = timed(lambda: infer_column(col, prefix, config, cuts, backend=kernels), args.repeat)
            ref = ref or t_full
            print(f"{name:<8}{h:>6}{'full':>8}{1.0:>9.3f}{1e3 * t_full:>11.2f}{ref / t_full:>9.2f}{0.0:>12.4f}")
            print(f"{name:<8}{h:>6}{'pruned':>8}{cut_density(cuts):>9.3f}{1e3 * t_fast:>11.2f}"
                  f"{ref / t_fast:>9.2f}{pruned.total_energy - exact.total_energy:>12.4f}")


if __name__ == "__main__":
    main()
