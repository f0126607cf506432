"""Time the LSTM forward/backward kernels compiled with numba against plain numpy.

    python benchmarks/bench_kernels.py [--dims 8 50 100] [--length 30] [--repeat 50]

Both variants come from the same source; the compiled one is warmed up once
before timing so compilation is not counted. Outputs are compared as well.
"""

import argparse
import time

import numpy as np

from gendisc.kernels import BACKWARD_PAIR, FORWARD_PAIR


def _inputs(rng, dim, length):
    D = E = dim
    # candidate weights read [x; h], the three gates also read a cell state
    W = [rng.uniform(-0.1, 0.1, (E, D + (1 if k == 2 else 2) * E)) for k in range(4)]
    b = [rng.uniform(-0.1, 0.1, E) for _ in range(4)]
    X = rng.standard_normal((length, D))
    return X, W, b


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(dim, length, repeat, seed=0):
    rng = np.random.default_rng(seed)
    X, W, b = _inputs(rng, dim, length)
    dH = rng.standard_normal((length, dim))
    rows = {}
    outs = {}
    for label, idx in (("numpy", 0), ("numba", 1)):
        fwd, bwd = FORWARD_PAIR[idx], BACKWARD_PAIR[idx]
        if fwd is None:
            continue
        H, C, Z, Zo, I, F, G, O = fwd(X, *W, *b)
        grads = bwd(dH, C, Z, Zo, I, F, G, O, *W)
        outs[label] = (H, grads)
        rows[label] = (
            _time(lambda: fwd(X, *W, *b), repeat),
            _time(lambda: bwd(dH, C, Z, Zo, I, F, G, O, *W), repeat),
        )
    diff = None
    if len(outs) == 2:
        (h0, g0), (h1, g1) = outs["numpy"], outs["numba"]
        diff = max(np.max(np.abs(h0 - h1)), max(np.max(np.abs(a - c)) for a, c in zip(g0, g1)))
    return rows, diff


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[8, 50, 100])
    ap.add_argument("--length", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    print(f"{'dim':>5} {'variant':>8} {'forward ms':>11} {'backward ms':>12} {'speedup':>8}")
    for dim in args.dims:
        rows, diff = bench(dim, args.length, args.repeat)
        base = sum(rows["numpy"])
        for label, (f, b) in rows.items():
            print(f"{dim:5d} {label:>8} {1e3 * f:11.3f} {1e3 * b:12.3f} {base / (f + b):7.1f}x")
        if diff is not None:
            print(f"{'':5} max |numpy - numba| = {diff:.2e}")


if __name__ == "__main__":
    main()
