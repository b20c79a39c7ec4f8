"""Hot numerical kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``NOUK_BACKEND=numpy`` to
force the fallback; otherwise numba is used when it can be imported.

Random variates come from a counter-based hash: the value for
``(key, sample, component)`` is a pure function of those integers, so any
partition of the sample range over threads reproduces the same numbers.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import erfc as _np_erfc

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_requested = os.environ.get("NOUK_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"NOUK_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
BACKEND = "numba" if (_requested == "numba" and numba is not None) else "numpy"

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_GAMMA2 = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

CHUNK = 4096

# rational approximation of the normal quantile (Acklam)
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_PLOW = 0.02425
_SQRT2PI = math.sqrt(2.0 * math.pi)
_SQRT1_2 = math.sqrt(0.5)


def _mix_int(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def stream_key(seed, op_id):
    """Combine a 64-bit seed and an operation id into one stream key."""
    if isinstance(op_id, str):
        op = 0
        for ch in op_id.encode("utf-8"):
            op = _mix_int(op * 131 + ch + 1)
    else:
        op = int(op_id) & _MASK
    return np.uint64(_mix_int(_mix_int(int(seed) & _MASK) ^ (op + _GAMMA)))


# ---------------------------------------------------------------- numpy path

def _np_mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _np_bits(key, start, n, dim):
    with np.errstate(over="ignore"):
        i = np.arange(start, start + n, dtype=np.uint64) + np.uint64(1)
        base = _np_mix(np.uint64(key) + i * np.uint64(_GAMMA))
        j = np.arange(1, dim + 1, dtype=np.uint64)
        return _np_mix(base[:, None] + j[None, :] * np.uint64(_GAMMA2))


def _np_uniform_from_bits(bits):
    k = (bits >> np.uint64(12)).astype(np.float64)
    return (2.0 * k + 1.0) * 2.0 ** -53


def _np_quantile_low(q):
    # q <= 0.5
    z = np.empty_like(q)
    low = q < _PLOW
    r = np.sqrt(-2.0 * np.log(q[low]))
    z[low] = ((((( _C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
        ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    mid = ~low
    v = q[mid] - 0.5
    w = v * v
    z[mid] = (((((_A[0] * w + _A[1]) * w + _A[2]) * w + _A[3]) * w + _A[4]) * w + _A[5]) * v / \
        (((((_B[0] * w + _B[1]) * w + _B[2]) * w + _B[3]) * w + _B[4]) * w + 1.0)
    e = 0.5 * _np_erfc(-z * _SQRT1_2) - q
    u = e * _SQRT2PI * np.exp(0.5 * z * z)
    return z - u / (1.0 + 0.5 * z * u)


def _np_normal_from_uniform(u):
    upper = u > 0.5
    q = np.where(upper, 1.0 - u, u)
    z = _np_quantile_low(q)
    return np.where(upper, -z, z)


def _np_normals(key, start, n, dim):
    return _np_normal_from_uniform(_np_uniform_from_bits(_np_bits(key, start, n, dim)))


def _np_uniforms(key, start, n, dim):
    return _np_uniform_from_bits(_np_bits(key, start, n, dim))


def _np_rk4_linear(Astg, Fstg, Y0, h):
    Y = Y0.copy()
    for j in range(Astg.shape[0]):
        A0, A1, A2 = Astg[j, 0], Astg[j, 1], Astg[j, 2]
        F0, F1, F2 = Fstg[j, 0], Fstg[j, 1], Fstg[j, 2]
        k1 = A0 @ Y + F0
        k2 = A1 @ (Y + 0.5 * h * k1) + F1
        k3 = A1 @ (Y + 0.5 * h * k2) + F1
        k4 = A2 @ (Y + h * k3) + F2
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Y


def _np_rk4_lyapunov(Astg, Sstg, Q0, h):
    Q = Q0.copy()

    def rhs(A, S, P):
        AP = A @ P
        return AP + AP.T + S

    for j in range(Astg.shape[0]):
        A0, A1, A2 = Astg[j, 0], Astg[j, 1], Astg[j, 2]
        S0, S1, S2 = Sstg[j, 0], Sstg[j, 1], Sstg[j, 2]
        k1 = rhs(A0, S0, Q)
        k2 = rhs(A1, S1, Q + 0.5 * h * k1)
        k3 = rhs(A1, S1, Q + 0.5 * h * k2)
        k4 = rhs(A2, S2, Q + h * k3)
        Q = Q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Q


def _np_euler_maruyama(Ast, Bst, fst, x0, dt, key, start, n):
    steps, N, M = Bst.shape
    X = np.tile(x0, (n, 1))
    sq = math.sqrt(dt)
    dW = _np_normals(key, start, n, steps * M).reshape(n, steps, M)
    for j in range(steps):
        X = X + dt * (X @ Ast[j].T + fst[j]) + sq * (dW[:, j, :] @ Bst[j].T)
    return X


# ---------------------------------------------------------------- numba path

if BACKEND == "numba":
    _u64 = np.uint64
    _nM1, _nM2 = _u64(_M1), _u64(_M2)
    _nG1, _nG2 = _u64(_GAMMA), _u64(_GAMMA2)
    _s30, _s27, _s31, _s12 = _u64(30), _u64(27), _u64(31), _u64(12)
    _nA, _nB, _nC, _nD = _A, _B, _C, _D

    @numba.njit(cache=True, nogil=True)
    def _nb_mix(z):
        z = (z ^ (z >> _s30)) * _nM1
        z = (z ^ (z >> _s27)) * _nM2
        return z ^ (z >> _s31)

    @numba.njit(cache=True, nogil=True)
    def _nb_uniform(key, i, j):
        base = _nb_mix(key + _u64(i + 1) * _nG1)
        bits = _nb_mix(base + _u64(j + 1) * _nG2)
        k = float(bits >> _s12)
        return (2.0 * k + 1.0) * 2.0 ** -53

    @numba.njit(cache=True, nogil=True)
    def _nb_quantile_low(q):
        if q < _PLOW:
            r = math.sqrt(-2.0 * math.log(q))
            z = (((((_nC[0] * r + _nC[1]) * r + _nC[2]) * r + _nC[3]) * r + _nC[4]) * r + _nC[5]) / \
                ((((_nD[0] * r + _nD[1]) * r + _nD[2]) * r + _nD[3]) * r + 1.0)
        else:
            v = q - 0.5
            w = v * v
            z = (((((_nA[0] * w + _nA[1]) * w + _nA[2]) * w + _nA[3]) * w + _nA[4]) * w + _nA[5]) * v / \
                (((((_nB[0] * w + _nB[1]) * w + _nB[2]) * w + _nB[3]) * w + _nB[4]) * w + 1.0)
        e = 0.5 * math.erfc(-z * _SQRT1_2) - q
        u = e * _SQRT2PI * math.exp(0.5 * z * z)
        return z - u / (1.0 + 0.5 * z * u)

    @numba.njit(cache=True, nogil=True)
    def _nb_normal(key, i, j):
        u = _nb_uniform(key, i, j)
        if u > 0.5:
            return -_nb_quantile_low(1.0 - u)
        return _nb_quantile_low(u)

    @numba.njit(cache=True, nogil=True)
    def _nb_normals(key, start, n, dim):
        out = np.empty((n, dim))
        for a in range(n):
            for b in range(dim):
                out[a, b] = _nb_normal(key, start + a, b)
        return out

    @numba.njit(cache=True, nogil=True)
    def _nb_uniforms(key, start, n, dim):
        out = np.empty((n, dim))
        for a in range(n):
            for b in range(dim):
                out[a, b] = _nb_uniform(key, start + a, b)
        return out

    @numba.njit(cache=True, nogil=True)
    def _nb_rk4_linear(Astg, Fstg, Y0, h):
        Y = Y0.copy()
        for j in range(Astg.shape[0]):
            k1 = Astg[j, 0] @ Y + Fstg[j, 0]
            k2 = Astg[j, 1] @ (Y + 0.5 * h * k1) + Fstg[j, 1]
            k3 = Astg[j, 1] @ (Y + 0.5 * h * k2) + Fstg[j, 1]
            k4 = Astg[j, 2] @ (Y + h * k3) + Fstg[j, 2]
            Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return Y

    @numba.njit(cache=True, nogil=True)
    def _nb_lyap_rhs(A, S, P):
        AP = A @ P
        return AP + AP.T + S

    @numba.njit(cache=True, nogil=True)
    def _nb_rk4_lyapunov(Astg, Sstg, Q0, h):
        Q = Q0.copy()
        for j in range(Astg.shape[0]):
            k1 = _nb_lyap_rhs(Astg[j, 0], Sstg[j, 0], Q)
            k2 = _nb_lyap_rhs(Astg[j, 1], Sstg[j, 1], Q + 0.5 * h * k1)
            k3 = _nb_lyap_rhs(Astg[j, 1], Sstg[j, 1], Q + 0.5 * h * k2)
            k4 = _nb_lyap_rhs(Astg[j, 2], Sstg[j, 2], Q + h * k3)
            Q = Q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return Q

    @numba.njit(cache=True, nogil=True)
    def _nb_euler_maruyama(Ast, Bst, fst, x0, dt, key, start, n):
        steps, N, M = Bst.shape
        out = np.empty((n, N))
        sq = math.sqrt(dt)
        X = np.empty(N)
        Xn = np.empty(N)
        dW = np.empty(M)
        for p in range(n):
            for a in range(N):
                X[a] = x0[a]
            for j in range(steps):
                for m in range(M):
                    dW[m] = sq * _nb_normal(key, start + p, j * M + m)
                for a in range(N):
                    acc = fst[j, a]
                    for b in range(N):
                        acc += Ast[j, a, b] * X[b]
                    noise = 0.0
                    for m in range(M):
                        noise += Bst[j, a, m] * dW[m]
                    Xn[a] = X[a] + dt * acc + noise
                for a in range(N):
                    X[a] = Xn[a]
            out[p, :] = X
        return out


# ---------------------------------------------------------------- dispatch

def normals(key, start, n, dim):
    """Standard normals for samples ``start .. start+n-1``, shape ``(n, dim)``."""
    if dim == 0 or n == 0:
        return np.zeros((n, dim))
    if BACKEND == "numba":
        return _nb_normals(np.uint64(key), int(start), int(n), int(dim))
    return _np_normals(key, start, n, dim)


def uniforms(key, start, n, dim):
    """Uniforms on the open unit interval, same indexing as :func:`normals`."""
    if dim == 0 or n == 0:
        return np.zeros((n, dim))
    if BACKEND == "numba":
        return _nb_uniforms(np.uint64(key), int(start), int(n), int(dim))
    return _np_uniforms(key, start, n, dim)


def rk4_linear(Astg, Fstg, Y0, h):
    """Classical RK4 for ``Y' = A(t) Y + F(t)`` with stage values precomputed.

    ``Astg[j]`` holds A at the left end, midpoint and right end of step j.
    """
    Astg = np.ascontiguousarray(Astg, dtype=np.float64)
    Fstg = np.ascontiguousarray(Fstg, dtype=np.float64)
    Y0 = np.ascontiguousarray(Y0, dtype=np.float64)
    if BACKEND == "numba":
        return _nb_rk4_linear(Astg, Fstg, Y0, float(h))
    return _np_rk4_linear(Astg, Fstg, Y0, float(h))


def rk4_lyapunov(Astg, Sstg, Q0, h):
    """Classical RK4 for ``Q' = A Q + Q A^T + S``."""
    Astg = np.ascontiguousarray(Astg, dtype=np.float64)
    Sstg = np.ascontiguousarray(Sstg, dtype=np.float64)
    Q0 = np.ascontiguousarray(Q0, dtype=np.float64)
    if BACKEND == "numba":
        return _nb_rk4_lyapunov(Astg, Sstg, Q0, float(h))
    return _np_rk4_lyapunov(Astg, Sstg, Q0, float(h))


def euler_maruyama(Ast, Bst, fst, x0, dt, key, start, n):
    """Terminal states of ``n`` Euler-Maruyama paths (indices ``start..``)."""
    Ast = np.ascontiguousarray(Ast, dtype=np.float64)
    Bst = np.ascontiguousarray(Bst, dtype=np.float64)
    fst = np.ascontiguousarray(fst, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if BACKEND == "numba":
        return _nb_euler_maruyama(Ast, Bst, fst, x0, float(dt), np.uint64(key), int(start), int(n))
    return _np_euler_maruyama(Ast, Bst, fst, x0, float(dt), key, start, n)


def run_chunks(n, fn, threads=1, chunk=CHUNK):
    """Evaluate ``fn(start, count)`` over fixed-size chunks of ``range(n)``.

    Chunk boundaries depend only on ``n`` and ``chunk``; the thread count only
    affects scheduling.  Results are concatenated in index order.
    """
    starts = list(range(0, n, chunk))
    counts = [min(chunk, n - a) for a in starts]
    threads = max(1, int(threads))
    if threads == 1 or len(starts) == 1:
        parts = [fn(a, c) for a, c in zip(starts, counts)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, starts, counts))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts, axis=0)
