"""Time the numba kernels against their pure-numpy twins.

Run with ``python3 benchmarks/bench_kernels.py [--repeat R]``.  Each kernel is
called once to compile, then timed with :mod:`timeit`; outputs of both paths
are compared so a speedup never hides a mismatch.
"""
import argparse
import timeit

import numpy as np

from nouk import _kernels as K


def cases(rng):
    N, M, steps = 8, 8, 256
    A = -np.eye(N) + 0.1 * rng.normal(size=(N, N))
    Astg = np.broadcast_to(A, (steps, 3, N, N)).copy()
    Fstg = np.zeros((steps, 3, N, N))
    S = np.eye(N)
    Sstg = np.broadcast_to(S, (steps, 3, N, N)).copy()
    Ast = np.broadcast_to(A, (steps, N, N)).copy()
    Bst = np.broadcast_to(np.eye(N, M), (steps, N, M)).copy()
    fst = np.zeros((steps, N))
    x0 = rng.normal(size=N)
    key = K.stream_key(7, "bench")
    h = 1.0 / steps
    return {
        "normals 65536 x 8": (lambda: K._nb_normals(np.uint64(key), 0, 65536, 8),
                              lambda: K._np_normals(key, 0, 65536, 8)),
        "rk4_linear N=8, 256 steps": (lambda: K._nb_rk4_linear(Astg, Fstg, np.eye(N), h),
                                      lambda: K._np_rk4_linear(Astg, Fstg, np.eye(N), h)),
        "rk4_lyapunov N=8, 256 steps": (lambda: K._nb_rk4_lyapunov(Astg, Sstg, np.zeros((N, N)), h),
                                        lambda: K._np_rk4_lyapunov(Astg, Sstg, np.zeros((N, N)), h)),
        "euler_maruyama 4096 paths, 256 steps": (
            lambda: K._nb_euler_maruyama(Ast, Bst, fst, x0, h, np.uint64(key), 0, 4096),
            lambda: K._np_euler_maruyama(Ast, Bst, fst, x0, h, key, 0, 4096)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if K.BACKEND != "numba":
        raise SystemExit("numba backend unavailable (unset NOUK_BACKEND or install numba)")
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, (nb, ref) in cases(np.random.default_rng(0)).items():
        diff = float(np.max(np.abs(nb() - ref())))
        t_nb = min(timeit.repeat(nb, number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(ref, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:40s} {t_nb:10.2f} {t_np:10.2f} {t_np / t_nb:8.1f} {diff:11.1e}")


if __name__ == "__main__":
    main()
