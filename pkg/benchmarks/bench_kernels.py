"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each case checks that both backends return identical results before timing.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from zslrac import _pyfallback

try:
    from zslrac import _core
except ImportError:
    _core = None


def simplex_case(n, o, seed):
    rng = np.random.default_rng(seed)
    cost = rng.standard_normal((n, o))
    supply = np.full(n, o, dtype=np.int64)
    demand = np.full(o, n, dtype=np.int64)
    return (cost, supply, demand, 10_000_000)


def nearest_case(q, p, d, seed):
    rng = np.random.default_rng(seed)
    scale = np.where(np.arange(p) < p // 2, 1.1, 1.0)
    return (rng.standard_normal((q, d)), rng.standard_normal((p, d)), scale)


CASES = [
    ("network_simplex 3x40", "network_simplex", lambda: simplex_case(3, 40, 0)),
    ("network_simplex 10x300", "network_simplex", lambda: simplex_case(10, 300, 1)),
    ("network_simplex 30x500", "network_simplex", lambda: simplex_case(30, 500, 2)),
    ("nearest_scaled 2000q x 50p x 64d", "nearest_scaled", lambda: nearest_case(2000, 50, 64, 3)),
    ("nearest_scaled 10000q x 200p x 128d", "nearest_scaled", lambda: nearest_case(10000, 200, 128, 4)),
]


def _same(a, b):
    return all(np.array_equal(x, y) if np.asarray(x).dtype.kind in "iub" else np.allclose(x, y)
               for x, y in zip(a, b))


def run(repeat):
    rows = []
    for label, kernel, make in CASES:
        args = make()
        py = getattr(_pyfallback, kernel)
        t_py = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
        row = {"case": label, "python_s": t_py, "cython_s": None, "speedup": None}
        if _core is not None:
            cy = getattr(_core, kernel)
            if not _same(py(*args), cy(*args)):
                raise SystemExit(f"{label}: backends disagree")
            t_cy = min(timeit.repeat(lambda: cy(*args), number=1, repeat=repeat))
            row.update(cython_s=t_cy, speedup=t_py / t_cy)
        rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled core not built; timing the fallback only", file=sys.stderr)
    rows = run(args.repeat)
    print(f"{'case':40s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for r in rows:
        cy = "-" if r["cython_s"] is None else f"{r['cython_s']:.4f}"
        sp = "-" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        print(f"{r['case']:40s} {r['python_s']:11.4f} {cy:>11s} {sp:>8s}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
