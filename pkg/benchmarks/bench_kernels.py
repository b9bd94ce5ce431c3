"""Compare the compiled and pure-Python kernel backends on speed and output.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--dim 60] [--rows 20000]
"""

import argparse
import math
import time

import numpy as np

from insider_stream.kernels import available_backends


def _time(fn, repeat):
    best = math.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(dim, rows, psi, seed=0):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(dim, dim))
    cov = b @ b.T / dim
    x = rng.normal(size=(rows, dim))
    sub = np.sort(rng.choice(rows, size=psi, replace=False)).astype(np.int64)
    u_feat, u_split = rng.random(2 * psi), rng.random(2 * psi)
    depth = math.ceil(math.log2(psi))

    def eigh(k):
        return lambda: k.jacobi_eigh(cov)

    def build(k):
        return lambda: k.build_itree(x, sub, u_feat, u_split, depth)

    def paths(k):
        f, th, le, ri, size = k.build_itree(x, sub, u_feat, u_split, depth)
        adj = np.zeros(len(f))
        return lambda: k.itree_path_lengths(x, f, th, le, ri, adj)

    return {f"jacobi_eigh {dim}x{dim}": (eigh, lambda a, b: np.allclose(np.sort(a[0]), np.sort(b[0]), atol=1e-9)),
            f"build_itree psi={psi}": (build, lambda a, b: all(np.array_equal(p, q) for p, q in zip(a, b))),
            f"itree_path_lengths n={rows}": (paths, lambda a, b: np.array_equal(a, b))}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dim", type=int, default=60)
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--psi", type=int, default=256)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the fallback only")
    print(f"{'kernel':<30} " + " ".join(f"{b:>10}" for b in backends) + f" {'speedup':>9} {'match':>6}")
    for name, (make, same) in cases(args.dim, args.rows, args.psi).items():
        times, outs = {}, {}
        for b, mod in backends.items():
            times[b], outs[b] = _time(make(mod), args.repeat)
        row = f"{name:<30} " + " ".join(f"{times[b] * 1e3:>8.2f}ms" for b in backends)
        if "cython" in backends:
            row += f" {times['python'] / times['cython']:>8.1f}x {str(same(outs['python'], outs['cython'])):>6}"
        print(row)


if __name__ == "__main__":
    main()
