"""Numba kernels against their pure-numpy twins."""
import os
import subprocess
import sys

import numpy as np
import pytest

from nouk import _kernels as k

numba_only = pytest.mark.skipif(k.BACKEND != "numba", reason="numba backend not active")


@numba_only
def test_normals_match():
    key = k.stream_key(3, "cmp")
    a = k._np_normals(key, 17, 500, 3)
    b = k._nb_normals(key, 17, 500, 3)
    assert np.allclose(a, b, rtol=0, atol=1e-15)


@numba_only
def test_uniforms_match():
    key = k.stream_key(4, "cmp")
    assert np.array_equal(k._np_uniforms(key, 0, 300, 2), k._nb_uniforms(key, 0, 300, 2))


@numba_only
def test_rk4_match(rng):
    n, N = 7, 3
    Astg = rng.normal(size=(n, 3, N, N)) * 0.3
    Fstg = rng.normal(size=(n, 3, N))
    Y0 = np.eye(N)
    a = k._np_rk4_linear(Astg, Fstg, Y0, 0.01)
    b = k._nb_rk4_linear(Astg, Fstg, Y0, 0.01)
    assert np.allclose(a, b, rtol=1e-14, atol=1e-15)


@numba_only
def test_euler_maruyama_match(rng):
    steps, N = 16, 3
    Ast = rng.normal(size=(steps, N, N)) * 0.2
    Bst = rng.normal(size=(steps, N, N)) * 0.2
    fst = rng.normal(size=(steps, N))
    key = k.stream_key(9, "em")
    x0 = rng.normal(size=N)
    a = k._np_euler_maruyama(Ast, Bst, fst, x0, 0.05, key, 0, 64)
    b = k._nb_euler_maruyama(Ast, Bst, fst, x0, 0.05, key, 0, 64)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_run_chunks_thread_invariant():
    key = k.stream_key(1, "chunks")
    f = lambda a, c: k.normals(key, a, c, 2)
    assert k.run_chunks(10000, f, 1).tobytes() == k.run_chunks(10000, f, 6).tobytes()


def test_numpy_backend_selected_by_env():
    code = ("from nouk import _kernels as k; from nouk.gaussian import NormalSampler;"
            "print(k.BACKEND); print(repr(NormalSampler(0).normals('golden', 0, 2, 3).tolist()))")
    env = dict(os.environ, NOUK_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    backend, vals = out.strip().split("\n")
    assert backend == "numpy"
    from test_gaussian import GOLDEN_NORMALS
    assert np.allclose(np.array(eval(vals)), GOLDEN_NORMALS, rtol=0, atol=1e-15)


def test_bad_backend_rejected():
    env = dict(os.environ, NOUK_BACKEND="cuda")
    r = subprocess.run([sys.executable, "-c", "import nouk"], env=env, capture_output=True, text=True)
    assert r.returncode != 0 and "NOUK_BACKEND" in r.stderr
