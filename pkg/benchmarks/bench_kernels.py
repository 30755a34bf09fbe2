"""Compiled vs pure-Python Jacobi sweeps, plus full ``svd`` / ``polar_maximize_trace``.

    python benchmarks/bench_kernels.py --sizes 8,16,32,64 --repeats 5

Both kernels run on identical copies of the same matrix; the script
reports the best-of-N wall time and the largest disagreement in the
returned right factor.
"""
import argparse
import time

import numpy as np

from rotbnn import _kernels
from rotbnn.linalg import svd


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_kernel(kernel, a):
    x = np.ascontiguousarray(a.T.copy())
    v = np.eye(a.shape[1])
    sweeps = kernel(x, v, 1e-12, 100)
    return x, v, sweeps


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="8,16,32,64")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    compiled = _kernels.compiled_jacobi_sweeps
    if compiled is None:
        print("compiled extension not built; timing the Python kernel only")
    print(f"{'n':>5} {'sweeps':>6} {'python ms':>11} {'compiled ms':>12} {'speedup':>8} {'max diff':>9} {'svd ms':>8}")
    rng = np.random.default_rng(args.seed)
    for n in (int(s) for s in args.sizes.split(",")):
        a = rng.standard_normal((n, n))
        t_py = best_time(lambda: run_kernel(_kernels.python_jacobi_sweeps, a), args.repeats)
        _, v_py, sweeps = run_kernel(_kernels.python_jacobi_sweeps, a)
        if compiled is not None:
            t_c = best_time(lambda: run_kernel(compiled, a), args.repeats)
            _, v_c, _ = run_kernel(compiled, a)
            diff = float(np.max(np.abs(v_c - v_py)))
            speed = f"{t_py / t_c:8.1f}"
            tc = f"{t_c * 1e3:12.3f}"
        else:
            diff, speed, tc = float("nan"), f"{'-':>8}", f"{'-':>12}"
        t_svd = best_time(lambda: svd(a), args.repeats)
        print(f"{n:>5} {sweeps:>6} {t_py * 1e3:11.3f} {tc} {speed} {diff:9.1e} {t_svd * 1e3:8.3f}")


if __name__ == "__main__":
    main()
