"""Time the numba-jitted kernel fills against the pure-numpy fallback.

Run:

    python benchmarks/bench_backends.py

Covers the two hot assembly routines (dense symmetric SE fill, same-group
masked fill) plus one full coordinate-sweep likelihood evaluation, which is
the unit of work the sampler repeats tens of thousands of times per study.
The active backend for library code follows GPRDD_DISABLE_NUMBA; this script
calls both implementations directly.
"""

import time

import numpy as np

from gprdd import _backend
from gprdd.kernels import SEParams
from gprdd.model import LikelihoodCache, Theta
from gprdd.simulation import gen_dgp1


def _time(fn, *args, repeats=50):
    fn(*args)  # warmup / JIT
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def bench_fills():
    rng = np.random.default_rng(0)
    print(f"active backend: {_backend.ACTIVE_BACKEND}")
    print(f"{'routine':<22}{'n':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>9}")
    for n in (100, 250, 500, 1000):
        xs = rng.uniform(-1, 1, n)
        groups = rng.integers(0, 10, n)
        rows = [
            ("se symmetric fill", _backend.se_sym_numpy, (xs, 1.0, 2.0)),
            ("same-group fill", _backend.same_group_dense_numpy, (xs, groups, 1.0, 2.0)),
        ]
        jitted = {
            "se symmetric fill": getattr(_backend, "_se_sym_nb", None),
            "same-group fill": getattr(_backend, "_same_group_nb", None),
        }
        for name, np_fn, args in rows:
            t_np = _time(np_fn, *args)
            nb_fn = jitted[name]
            if nb_fn is None:
                print(f"{name:<22}{n:>6}{t_np:>12.3f}{'n/a':>12}{'n/a':>9}")
                continue
            t_nb = _time(nb_fn, *args)
            print(f"{name:<22}{n:>6}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.2f}")


def bench_sweep_eval():
    # one g-kernel coordinate evaluation = kernel rebuild + refactorization
    data, _ = gen_dgp1(J=5, n_j=50, rng=np.random.default_rng(1))
    theta = Theta(
        mu=0.0,
        sigma_minus_sq=np.full(5, 0.1),
        sigma_plus_sq=np.full(5, 0.1),
        f_kernel=SEParams(0.5, 1.0),
        g_kernel=SEParams(0.5, 1.0),
        delta_kernel=SEParams(0.5, 1.0),
    )
    cache = LikelihoodCache(data, theta)
    coord = 2 * 5 + 3  # shared-level kernel variance
    t = _time(lambda: cache.evaluate(coord, 0.6), repeats=200)
    print(f"\ncoordinate evaluation (N={data.N}, {_backend.ACTIVE_BACKEND} backend): {t:.3f} ms")


if __name__ == "__main__":
    bench_fills()
    bench_sweep_eval()
