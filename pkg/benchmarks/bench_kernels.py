"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--samples 20000] [--n 16]

Both backends are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from dsfkit import _kernels, concave as C
from dsfkit._backend import get_threads, numba_available
from dsfkit.core import GroundSet
from dsfkit.dsf import DsfModel, DsfNode


def random_model(n, width=8, depth=3, seed=0):
    rng = np.random.default_rng(seed)
    kinds = [C.sqrt, lambda: C.log_gamma(1.0), lambda: C.truncate(2.0), C.one_minus_exp]
    nodes, prev = [], []
    for d in range(depth):
        cur = []
        for i in range(width):
            nid = f"L{d}_{i}"
            unit = kinds[rng.integers(len(kinds))]()
            if prev:
                nodes.append(DsfNode(nid, unit, [(p, rng.uniform(.1, 1)) for p in prev], ()))
            else:
                nodes.append(DsfNode(nid, unit, (), [(a, rng.uniform(.1, 1)) for a in range(n)]))
            cur.append(nid)
        prev = cur
    nodes.append(DsfNode("root", C.sqrt(), [(p, 1.0) for p in prev], ()))
    return DsfModel(GroundSet.range(n), nodes, "root")


def best_of(fn, reps=5):
    fn()  # warm-up (includes JIT compile on first call)
    times = []
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--n", type=int, default=16)
    a = ap.parse_args()
    if not numba_available():
        print("numba is not installed; nothing to compare")
        return

    c = random_model(a.n).compile()
    X = (np.random.default_rng(1).random((a.samples, a.n)) < .5).astype(float)
    out_nb = _kernels.forward(c, X, backend="numba")[0]
    out_np = _kernels.forward(c, X, backend="numpy")[0]
    assert np.allclose(out_nb, out_np, rtol=1e-12, atol=1e-12)
    t_nb = best_of(lambda: _kernels.forward(c, X, backend="numba"))
    t_np = best_of(lambda: _kernels.forward(c, X, backend="numpy"))
    print(f"threads: {get_threads()}")
    print(f"forward   {a.samples} x n={a.n}: numba {t_nb * 1e3:8.2f} ms  numpy {t_np * 1e3:8.2f} ms  "
          f"speedup {t_np / t_nb:5.1f}x")

    table = c.model.evaluate_masks(np.arange(1 << a.n))
    r_nb = _kernels.local_violations(table, a.n, 1.0, 1e-9, backend="numba")
    r_np = _kernels.local_violations(table, a.n, 1.0, 1e-9, backend="numpy")
    assert all(np.array_equal(x, y) for x, y in zip(r_nb, r_np))
    t_nb = best_of(lambda: _kernels.local_violations(table, a.n, 1.0, 1e-9, backend="numba"))
    t_np = best_of(lambda: _kernels.local_violations(table, a.n, 1.0, 1e-9, backend="numpy"))
    print(f"lattice   2^{a.n} subsets:    numba {t_nb * 1e3:8.2f} ms  numpy {t_np * 1e3:8.2f} ms  "
          f"speedup {t_np / t_nb:5.1f}x")


if __name__ == "__main__":
    main()
