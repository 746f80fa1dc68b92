"""Compare the compiled and pure-Python walk kernels.

    python3 benchmarks/bench_kernels.py [--nodes 2000] [--walks-per-node 4] [--length 10]

Both backends consume the same uniforms, so their outputs must agree exactly;
the script checks that before timing.
"""

import argparse
import time

import numpy as np

from endemic import _kernels


def random_csr(n: int, avg_deg: int, rng: np.random.Generator):
    m = n * avg_deg // 2
    a = rng.integers(0, n, m)
    b = rng.integers(0, n, m)
    keep = a != b
    heads = np.concatenate([a[keep], b[keep]])
    tails = np.concatenate([b[keep], a[keep]])
    order = np.lexsort((tails, heads))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(heads, minlength=n), out=indptr[1:])
    return indptr, tails[order].astype(np.int64)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--degree", type=int, default=8)
    ap.add_argument("--walks-per-node", type=int, default=4)
    ap.add_argument("--length", type=int, default=10)
    ap.add_argument("--window", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if _kernels.BACKEND != "cython":
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation` first")

    rng = np.random.default_rng(0)
    indptr, indices = random_csr(args.nodes, args.degree, rng)
    starts = np.repeat(np.arange(args.nodes), args.walks_per_node)
    coins = rng.random((len(starts), args.length))
    picks = rng.random((len(starts), args.length))

    walks = {b: _kernels.teleport_walks(indptr, indices, starts, args.length, 0.3, coins, picks, backend=b) for b in ("python", "cython")}
    assert np.array_equal(walks["python"], walks["cython"]), "backends disagree on walks"
    pairs = {b: _kernels.cooccurrence_pairs(walks["cython"], args.window, backend=b) for b in ("python", "cython")}
    assert np.array_equal(pairs["python"], pairs["cython"]), "backends disagree on pairs"

    print(f"{len(starts)} walks of length {args.length} on {args.nodes} nodes; {len(pairs['cython'])} pairs")
    print(f"{'kernel':<20}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, fn in (
        ("teleport_walks", lambda b: _kernels.teleport_walks(indptr, indices, starts, args.length, 0.3, coins, picks, backend=b)),
        ("cooccurrence_pairs", lambda b: _kernels.cooccurrence_pairs(walks["cython"], args.window, backend=b)),
    ):
        tp = best_of(lambda: fn("python"), args.repeat)
        tc = best_of(lambda: fn("cython"), args.repeat)
        print(f"{name:<20}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
