"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Outputs agree between backends to floating-point tolerance; this script
reports the median wall time per call and the speedup.
"""

import argparse
import time

import numpy as np

from deconfounder import kernels
from deconfounder._accel import NUMBA_AVAILABLE, use_backend
from deconfounder.factor.lfa import gauss_hermite
from deconfounder.factor.quadratic import features, latent_grid


def cases(scale, gen):
    n, m = int(1000 * scale), int(50 * scale) or 1
    A = gen.standard_normal((n, m))
    M = (gen.random((n, m)) > 0.2).astype(float)
    L = gen.standard_normal((m, 3))
    yield "gaussian_estep", kernels.gaussian_estep, (A, M, L, np.zeros(m), 0.5, 1.0)

    X, lp = latent_grid(1, 201, 5.0)
    F = features(X)
    W = gen.standard_normal((2, 3)) * 0.5
    A2 = gen.standard_normal((int(2000 * scale), 2))
    M2 = np.ones_like(A2)
    yield "grid_estep", kernels.grid_estep, (A2, M2, F @ W.T, F, X, lp, 0.5)

    nodes, logw = gauss_hermite(21)
    G = gen.integers(0, 3, size=(n, int(100 * scale))).astype(float)
    Eta = gen.standard_normal(G.shape)
    yield "binomial_gh", kernels.binomial_gh, (G, np.ones_like(G), Eta, 2, 0.3, nodes, logw)

    P = gen.standard_normal((int(5000 * scale), 3))
    C = gen.standard_normal((3, 3))
    yield "kmeans_assign", kernels.kmeans_assign, (P, C)

    yield "poisson_entropy", kernels.poisson_entropy, (gen.gamma(2.0, 1.0, size=(n, m)),)


def timed(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    gen = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, fn, fargs in cases(args.scale, gen):
        with use_backend("numba"):
            t_nb = timed(fn, fargs, args.repeat)
        with use_backend("numpy"):
            t_np = timed(fn, fargs, args.repeat)
        print(f"{name:<18}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>10.1f}x")


if __name__ == "__main__":
    main()
