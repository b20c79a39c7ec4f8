"""Evolution operator U(t,s), mean, covariance Q(t,s), Lambda(t,s) and diagnostics."""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate

from . import _kernels
from .errors import IntegratorFailure, KernelComponent, NotSmoothing, RangeError, RankDeficient, ValidationError
from .gaussian import GaussianState, h_hat

__all__ = ["Propagator", "LambdaOperator", "transition", "mean", "covariance", "state",
           "covariance_quadrature", "lambda_operator", "gramian_min_energy", "cocycle_defect",
           "cov_monotonicity_defect", "cm_equivalence_constants", "ht_embedding_constant",
           "ht_embedding_bound"]

RK4_REL = 1e-3          # base step as a fraction of T
RK4_TARGET = 1e-10      # step-halving target
RK4_REFUSE = 1e-8       # larger estimates are refused
RK4_MAX_DOUBLINGS = 8
QUAD_RTOL = 1e-13


def _readonly(v):
    if isinstance(v, np.ndarray):
        v.setflags(write=False)
    elif isinstance(v, tuple):
        for item in v:
            _readonly(item)
    return v


def _cached(fn):
    """Memoize a pure (model, s, t) helper; cached arrays are made read-only."""
    @lru_cache(maxsize=2048)
    def wrapper(model, s, t):
        return _readonly(fn(model, s, t))
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _check_times(model, s, t):
    s, t = float(s), float(t)
    if t < s:
        raise ValidationError("require s <= t")
    eps = 1e-12 * model.T
    if s < -eps or t > model.T + eps:
        raise ValidationError(f"times must lie in [0, T] = [0, {model.T}]")
    return s, t


@dataclass(frozen=True)
class Propagator:
    """U(t,s) as per-mode multipliers, a scalar multiple of I, or a dense matrix."""

    rep: str
    s: float
    t: float
    data: np.ndarray
    error_estimate: float = 0.0

    def matrix(self):
        if self.rep == "diagonal":
            return np.diag(self.data)
        if self.rep == "scalar":
            return float(self.data[0]) * np.eye(self.data.size)
        return self.data

    @property
    def diag(self):
        """Per-mode multipliers (diagonal and scalar representations)."""
        return self.data

    def apply(self, x):
        """U x for x of shape (..., N)."""
        x = np.asarray(x, dtype=float)
        if self.rep in ("diagonal", "scalar"):
            return x * self.data
        return x @ self.data.T


# ---------------------------------------------------------------- RK4 core

def _stage_times(s, t, n):
    h = (t - s) / n
    left = s + h * np.arange(n)
    return np.stack([left, left + 0.5 * h, left + h], axis=1), h


def _rk4_controlled(solve, s, t, T):
    """Run ``solve(n)`` at n and 2n steps, doubling until the Richardson estimate is small."""
    n = max(1, int(math.ceil((t - s) / (T * RK4_REL) - 1e-9)))
    coarse = solve(n)
    for _ in range(RK4_MAX_DOUBLINGS):
        fine = solve(2 * n)
        scale = max(1.0, float(np.max(np.abs(fine))))
        est = float(np.max(np.abs(fine - coarse))) / 15.0 / scale
        if est <= RK4_TARGET:
            break
        n, coarse = 2 * n, fine
    if est > RK4_REFUSE:
        raise IntegratorFailure(f"RK4 error estimate {est:.3g} exceeds {RK4_REFUSE:g}")
    return fine + (fine - coarse) / 15.0, est


@_cached
def _dense_U(model, s, t):
    N = model.N

    def solve(n):
        times, h = _stage_times(s, t, n)
        return _kernels.rk4_linear(model.A_at(times), np.zeros((n, 3, N, N)), np.eye(N), h)

    return _rk4_controlled(solve, s, t, model.T)


# ---------------------------------------------------------------- operations

def transition(model, s, t):
    """Evolution operator U(t, s).

    Diagonal and scalar models use exact antiderivatives of the drift
    rates; dense models integrate dU/dtau = A(tau) U with RK4 and step
    halving.

    Raises
    ------
    ValidationError
        If the times are out of order or outside [0, T].
    IntegratorFailure
        If the RK4 error estimate cannot be brought below 1e-8.
    """
    s, t = _check_times(model, s, t)
    N = model.N
    if model.kind == "scalar_identity":
        mu = 1.0 if s == t else math.exp(model.a[0].integral(s, t))
        return Propagator("scalar", s, t, np.full(N, mu))
    if model.kind == "diagonal":
        d = np.ones(N) if s == t else np.exp(model.log_multipliers(s, t))
        return Propagator("diagonal", s, t, d)
    if s == t:
        return Propagator("dense", s, t, np.eye(N))
    U, est = _dense_U(model, s, t)
    return Propagator("dense", s, t, U, est)


@_cached
def _affine_diag(model, s, t):
    g = np.zeros(model.N)
    if not model.has_affine or s == t:
        return g
    fns = model.drift_fns()
    for k in range(model.N):
        a, fk = fns[k], model.f[k]
        if fk.is_zero:
            continue
        if a.is_constant and fk.is_constant:
            rate, c = a(0.0), fk(0.0)
            tau = t - s
            g[k] = c * (math.expm1(rate * tau) / rate if rate != 0.0 else tau)
            continue

        def integrand(r, a=a, fk=fk):
            return math.exp(a.integral(r, t)) * fk(r)

        g[k], _ = integrate.quad(integrand, s, t, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    return g


def mean(model, s, t, x):
    """Mean m^x(t,s) = U(t,s) x + integral of U(t,r) f(r) over [s, t]."""
    s, t = _check_times(model, s, t)
    x = np.asarray(x, dtype=float)
    if x.shape != (model.N,):
        raise ValidationError(f"x must have length {model.N}")
    if model.is_diagonal:
        return transition(model, s, t).apply(x) + _affine_diag(model, s, t)
    if s == t:
        return x.copy()
    if not model.has_affine:
        return transition(model, s, t).apply(x)
    return transition(model, s, t).apply(x) + _affine_dense(model, s, t)


@_cached
def _affine_dense(model, s, t):
    """Forced part of the mean (started from 0), integrated with RK4."""
    def solve(n):
        times, h = _stage_times(s, t, n)
        F = model.f_at(times)[..., None]
        return _kernels.rk4_linear(model.A_at(times), F, np.zeros((model.N, 1)), h)

    m, _ = _rk4_controlled(solve, s, t, model.T)
    return m[:, 0]


@_cached
def _q_diag(model, s, t):
    N = model.N
    q = np.zeros(N)
    if s == t:
        return q
    fns = model.drift_fns()
    tau = t - s
    for k in range(N):
        a, b = fns[k], model.b[k]
        if b.is_zero:
            continue
        if a.is_constant and b.is_constant:
            rate, bb = a(0.0), b(0.0) ** 2
            q[k] = bb * (math.expm1(2.0 * rate * tau) / (2.0 * rate) if rate != 0.0 else tau)
            continue

        def integrand(r, a=a, b=b):
            return math.exp(2.0 * a.integral(r, t)) * b(r) ** 2

        q[k], _ = integrate.quad(integrand, s, t, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    return q


@_cached
def _q_dense(model, s, t):
    N = model.N
    if s == t:
        return np.zeros((N, N))

    def solve(n):
        times, h = _stage_times(s, t, n)
        B = model.B_at(times)
        S = B @ np.swapaxes(B, -1, -2)
        return _kernels.rk4_lyapunov(model.A_at(times), S, np.zeros((N, N)), h)

    Q, _ = _rk4_controlled(solve, s, t, model.T)
    return Q


def covariance(model, s, t):
    """Covariance Q(t,s) as a zero-mean :class:`GaussianState`.

    Diagonal kinds integrate exp(2 int_r^t a_k) b_k(r)^2 per mode (closed
    form when both are constant, adaptive quadrature otherwise); dense
    models integrate the Lyapunov equation Q' = AQ + QA^T + BB^T with RK4.
    """
    s, t = _check_times(model, s, t)
    if model.is_diagonal:
        return GaussianState(q=_q_diag(model, s, t).copy())
    return GaussianState(cov=_q_dense(model, s, t))


def state(model, s, t, x):
    """Law of the solution at t started from x at s: N(m^x(t,s), Q(t,s))."""
    return covariance(model, s, t).with_mean(mean(model, s, t, x))


def covariance_quadrature(model, s, t, panels=8, nodes=16):
    """Reference Q(t,s) by Gauss-Legendre quadrature of U(t,r) B B^T U(t,r)^T dr.

    Each node uses its own propagator solve, so this path is independent of
    the Lyapunov integration.
    """
    s, t = _check_times(model, s, t)
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(s, t, panels + 1)
    Q = np.zeros((model.N, model.N))
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        for xi, wi in zip(x, w):
            r = lo + half * (xi + 1.0)
            U = transition(model, r, t).matrix()
            B = model.B_at(r)
            UB = U @ B
            Q += half * wi * (UB @ UB.T)
    return 0.5 * (Q + Q.T)


@dataclass(frozen=True)
class LambdaOperator:
    """Lambda(t,s) = Q(t,s)^(-1/2) U(t,s) and its E -> X version.

    ``raw`` acts on state vectors, ``matrix = raw @ diag(1/w)`` acts on
    E-coordinates; ``norm`` is the largest singular value of ``matrix``.
    """

    raw: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray
    norm: float
    nonsmoothing_modes: tuple = ()

    def apply(self, h):
        return np.asarray(h, dtype=float) @ self.raw.T

    def gram(self, dirs):
        L = np.asarray([self.apply(h) for h in dirs])
        return L @ L.T


def lambda_operator(model, E, s, t, strict=True):
    """Lambda(t,s) on the direction space E.

    Parameters
    ----------
    model : EvolutionModel
    E : DirectionSpace
    s, t : float
        Requires s < t.
    strict : bool
        When True (default) a mode with zero covariance but nonzero
        transported component raises :class:`NotSmoothing`; when False such
        modes are only listed in ``nonsmoothing_modes``.
    """
    s, t = _check_times(model, s, t)
    if not s < t:
        raise ValidationError("lambda_operator requires s < t")
    if E.N != model.N:
        raise ValidationError("direction space dimension does not match the model")
    U = transition(model, s, t)
    Q = covariance(model, s, t)
    w = E.w
    if model.is_diagonal:
        d = U.diag
        bad = tuple(int(k) + 1 for k in np.flatnonzero(~Q.positive & (d != 0.0)))
        inv = np.where(Q.positive, 1.0 / np.sqrt(np.where(Q.positive, Q.eigvals, 1.0)), 0.0)
        raw = np.diag(inv * d)
        entries = inv * d / w
        mat = np.diag(entries)
        norm = float(np.max(np.abs(entries)))
    else:
        Um = U.matrix()
        kernel = Q.eigvecs[:, ~Q.positive]
        col = np.linalg.norm(Um, axis=0)
        leak = np.linalg.norm(kernel.T @ Um, axis=0) if kernel.size else np.zeros(model.N)
        bad = tuple(int(k) + 1 for k in np.flatnonzero(leak > 1e-10 * np.maximum(col, 1e-300)))
        raw = Q.pinv_sqrt() @ Um
        mat = raw / w[None, :]
        norm = float(np.linalg.norm(mat, 2))
    if bad and strict:
        raise NotSmoothing(bad)
    return LambdaOperator(raw, w, mat, norm, bad)


class GramianResult(NamedTuple):
    control: np.ndarray
    norm: float
    defect: float
    reference: float
    residual: float


def gramian_min_energy(model, s, t, target, time_grid_size=512):
    """Minimum-energy control steering 0 to ``target`` on a uniform grid.

    The control y_j on the midpoint grid sigma_j enters through
    sum_j dsigma U(t, sigma_j) B(sigma_j) y_j; the least-squares minimum-norm
    solution has discrete L2 norm approximating |Q(t,s)^(-1/2) target|.

    Raises
    ------
    RangeError
        If the target cannot be reached (least-squares residual too large).
    """
    s, t = _check_times(model, s, t)
    if not s < t:
        raise ValidationError("gramian_min_energy requires s < t")
    target = np.asarray(target, dtype=float)
    n = int(time_grid_size)
    M = model.noise_dim
    dsig = (t - s) / n
    sig = s + dsig * (np.arange(n) + 0.5)
    if model.is_diagonal:
        fns = model.drift_fns()
        d = np.exp(np.stack([np.asarray(g.integral(sig, t)) * np.ones(n) for g in fns], axis=1))
        blocks = d[:, :, None] * model.B_at(sig)
    else:
        blocks = np.stack([transition(model, r, t).matrix() @ model.B_at(r) for r in sig])
    # L z = sum_j sqrt(dsig) U B z_j with z_j = sqrt(dsig) y_j, so |z|_2 = |y|_L2
    L = math.sqrt(dsig) * np.transpose(blocks, (1, 0, 2)).reshape(model.N, n * M)
    z, *_ = np.linalg.lstsq(L, target, rcond=None)
    resid = float(np.linalg.norm(L @ z - target))
    if resid > 1e-8 * max(1.0, float(np.linalg.norm(target))):
        raise RangeError(f"target not reachable: residual {resid:.3g}")
    Q = covariance(model, s, t)
    try:
        ref = math.sqrt(max(h_hat(Q, target).norm_sq, 0.0))
    except KernelComponent as exc:
        raise RangeError(f"target outside the range of Q(t,s): {exc}") from None
    norm = float(np.linalg.norm(z))
    control = z.reshape(n, M) / math.sqrt(dsig)
    return GramianResult(control, norm, abs(norm - ref), ref, resid)


def cocycle_defect(model, s, r, t):
    """Spectral norm of U(t,r) U(r,s) - U(t,s)."""
    if not (s <= r <= t):
        raise ValidationError("require s <= r <= t")
    A = transition(model, r, t).matrix() @ transition(model, s, r).matrix()
    return float(np.linalg.norm(A - transition(model, s, t).matrix(), 2))


class MonotonicityReport(NamedTuple):
    defect: float
    lipschitz_ratio: float
    bound: float
    scale: float


def _sup_U_B(model, lo, t, points=17):
    grid = np.linspace(lo, t, points)
    nu = max(float(np.linalg.norm(transition(model, r, t).matrix(), 2)) for r in grid)
    grid_b = np.linspace(0.0, model.T, 257)
    kb = max(float(np.linalg.norm(B, 2)) for B in model.B_at(grid_b))
    return nu, kb


def cov_monotonicity_defect(model, t, s1, s2):
    """Check s -> Q(t,s) is non-increasing and Lipschitz.

    Returns ``(defect, lipschitz_ratio, bound, scale)``: the positive part of
    the top eigenvalue of Q(t,s2) - Q(t,s1), the difference quotient of Q,
    the bound sup|U|^2 sup|B|^2 and the trace of Q(t,s1).
    """
    if not (s1 <= s2 <= t):
        raise ValidationError("require s1 <= s2 <= t")
    Q1 = covariance(model, s1, t).matrix()
    Q2 = covariance(model, s2, t).matrix()
    D = Q2 - Q1
    defect = max(0.0, float(np.max(np.linalg.eigvalsh(0.5 * (D + D.T)))))
    ratio = 0.0 if s1 == s2 else float(np.linalg.norm(D, 2)) / (s2 - s1)
    nu, kb = _sup_U_B(model, s1, t)
    return MonotonicityReport(defect, ratio, nu ** 2 * kb ** 2, float(np.trace(Q1)))


def _full_rank(G, what):
    if G.rank < G.N:
        raise RankDeficient(f"{what} has rank {G.rank} < {G.N}")


def cm_equivalence_constants(model, t, s1, s2):
    """Equivalence constants of the Cameron-Martin norms of Q(t,s1) and Q(t,s2).

    Returns ``(C12, C21)`` with C12 the largest singular value of
    Q(t,s1)^(-1/2) Q(t,s2)^(1/2) and C21 the same with roles swapped.
    """
    if not (s1 <= s2 < t):
        raise ValidationError("require s1 <= s2 < t")
    G1 = covariance(model, s1, t)
    G2 = covariance(model, s2, t)
    _full_rank(G1, "Q(t,s1)")
    _full_rank(G2, "Q(t,s2)")
    c12 = float(np.linalg.norm(G1.pinv_sqrt() @ G2.sqrt(), 2))
    c21 = float(np.linalg.norm(G2.pinv_sqrt() @ G1.sqrt(), 2))
    return c12, c21


def _instant_cov(model, t):
    B = model.B_at(t)
    return GaussianState(cov=B @ B.T) if not model.is_diagonal else GaussianState(q=np.diag(B) ** 2)


def ht_embedding_constant(model, s, t):
    """Norm of the embedding of range Q(t,s)^(1/2) into range Q(t)^(1/2), Q(t) = B(t) B(t)^T."""
    s, t = _check_times(model, s, t)
    if not s < t:
        raise ValidationError("require s < t")
    Qt = _instant_cov(model, t)
    _full_rank(Qt, "Q(t)")
    G = covariance(model, s, t)
    _full_rank(G, "Q(t,s)")
    return float(np.linalg.norm(Qt.pinv_sqrt() @ G.sqrt(), 2))


def ht_embedding_bound(model, s, t, points=33):
    """M sqrt(t - s) with M = sup_r |Q(t)^(-1/2) U(t,r) Q(r)^(1/2)| over a grid in [s, t]."""
    Qt = _instant_cov(model, t)
    _full_rank(Qt, "Q(t)")
    P = Qt.pinv_sqrt()
    M = 0.0
    for r in np.linspace(s, t, points):
        U = transition(model, r, t).matrix()
        M = max(M, float(np.linalg.norm(P @ U @ _instant_cov(model, r).sqrt(), 2)))
    return M * math.sqrt(t - s)
