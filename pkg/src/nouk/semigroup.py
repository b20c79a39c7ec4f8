"""Evaluation of P_{s,t} phi and of its derivative representations.

P_{s,t} phi(x) is the expectation of phi(m^x(t,s) + Y) with Y ~ N(0, Q(t,s)).
Derivatives are available in three forms: transported (differentiate phi
along U(t,s) h), smoothing (weight phi by the polynomial I_n in the
Cameron-Martin functionals) and mixed.  Finite differences and an
Euler-Maruyama simulation serve as independent oracles.
"""
import itertools
import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from . import _kernels
from . import propagator as prop
from .errors import MethodUnavailable, NotSeparable, UnsupportedOrder, ValidationError
from .functions import subset_dp
from .gaussian import GaussianState, NormalSampler, gh_factor_moments, gh_ridge, h_hat

__all__ = ["EvalReport", "SmoothingContext", "apply", "build_context", "in_eval", "pairing_expansion",
           "smoothing_derivative", "transported_derivative", "mixed_derivative", "fd_derivative",
           "sde_expectation", "em_gaussian_law", "chapman_defect", "closed_form_value",
           "ridge_expectation", "DEFAULT_SAMPLES", "MAX_SMOOTHING_ORDER"]

DEFAULT_SAMPLES = 2 ** 16
MAX_SMOOTHING_ORDER = 6
METHODS = ("auto", "mc", "gauss_hermite", "closed_form")


@dataclass(frozen=True)
class EvalReport:
    """An estimate with its uncertainty (MC standard error or quadrature error estimate)."""

    value: float
    uncertainty: float
    method: str
    n_samples: int = 0
    seed: int = 0
    timing: float = 0.0


def _report(value, unc, method, n=0, seed=0, t0=None):
    return EvalReport(float(value), float(abs(unc)), method, int(n), int(seed),
                      0.0 if t0 is None else time.perf_counter() - t0)


# ---------------------------------------------------------------- closed forms

SERIES_MAX_TERMS = 20000


def _abs_sin_terms(v, n):
    """Series length J with (2J)^n exp(-2 J^2 v) < 1e-18, or None beyond SERIES_MAX_TERMS."""
    J = max(8, int(math.ceil(math.sqrt(40.0 / (2.0 * v)))))
    while (2.0 * J) ** n * math.exp(-2.0 * J * J * v) > 1e-18:
        J = int(J * 1.25) + 1
        if J > SERIES_MAX_TERMS:
            return None
    return np.arange(1, J + 1, dtype=float)


def _abs_sin_local(u, v, n):
    """E g^(n)(W), g = |sin|, W ~ N(u, v), by integrating piece by piece between kinks.

    On (k pi, (k+1) pi) g = (-1)^k sin, which gives n = 0, 1 through the
    complex normal CDF.  Since g'' = -g + 2 sum_k delta_{k pi}, higher orders
    follow from E g^(n) = -E g^(n-2) + 2 v^(-(n-1)/2) sum_k He_{n-2}(z_k) pdf(z_k).
    """
    sd = math.sqrt(v)
    lo, hi = u - 40.0 * sd, u + 40.0 * sd
    k0, k1 = math.floor(lo / math.pi), math.floor(hi / math.pi)
    if n >= 2:
        kinks = np.arange(k0 + 1, k1 + 1) * math.pi
        z = (kinks - u) / sd
        He = np.polynomial.hermite_e.hermeval(z, [0.0] * (n - 2) + [1.0])
        delta = 2.0 * sd ** (-(n - 1)) * float(np.sum(He * np.exp(-0.5 * z * z))) / math.sqrt(2.0 * math.pi)
        return -_abs_sin_local(u, v, n - 2) + delta

    def cdf(a):
        if a == -math.inf:
            return 0.0
        if a == math.inf:
            return 1.0
        return 0.5 * special.erfc(-((a - u) / sd - 1j * sd) / math.sqrt(2.0))

    total = 0.0 + 0.0j
    for k in range(k0, k1 + 1):
        a = -math.inf if k == k0 else k * math.pi
        b = math.inf if k == k1 else (k + 1) * math.pi
        total += (-1) ** k * (cdf(b) - cdf(a))
    total *= np.exp(1j * u - 0.5 * v)
    return float(total.imag if n == 0 else total.real)


def ridge_expectation(kind, u, v, n=0):
    """E g^(n)(u + sqrt(v) Z) in closed form for g = cos or |sin|.

    For |sin| the Fourier series
    |sin w| = 2/pi - (4/pi) sum_j cos(2jw) / (4j^2 - 1)
    is integrated term by term; when the series would need more than
    SERIES_MAX_TERMS terms (tiny v) the piecewise form is used instead.
    """
    u = np.asarray(u, dtype=float)
    if kind == "cos":
        return np.cos(u + n * math.pi / 2) * math.exp(-0.5 * v)
    if kind == "abs_sin":
        if v == 0.0 and n == 0:
            return np.abs(np.sin(u))
        j = _abs_sin_terms(v, n)
        if j is None:
            return np.vectorize(lambda w: _abs_sin_local(w, v, n))(u)
        coef = (2.0 * j) ** n * np.exp(-2.0 * j * j * v) / (4.0 * j * j - 1.0)
        series = np.cos(2.0 * np.multiply.outer(u, j) + n * math.pi / 2) @ coef
        return (2.0 / math.pi if n == 0 else 0.0) - (4.0 / math.pi) * series
    raise MethodUnavailable(f"no closed form for profile {kind!r}")


def _closed_moments(G, phi, order):
    """Per-mode E f_j^(p)(m_j + Y_j), p = 0..order, for separable cos/const products."""
    out = np.zeros((G.N, order + 1))
    for j, f in enumerate(phi.factors):
        for p in range(order + 1):
            if f.kind == "const":
                out[j, p] = f.c if p == 0 else 0.0
            else:
                out[j, p] = f.l ** p * math.cos(f.l * G.mean[j] + f.c + p * math.pi / 2) * \
                    math.exp(-0.5 * f.l ** 2 * G.eigvals[j])
    return out


def closed_form_value(G, phi, tdirs=()):
    """E[D^k phi(m + Y)(u_1..u_k)] in closed form, Y ~ N(0, Q), with u_i = ``tdirs``.

    Covers constants, cosines, |sin| ridges (series) and separable cosine
    products on diagonal covariances.
    """
    k = len(tdirs)
    if phi.kind == "constant":
        return phi.c if k == 0 else 0.0
    if phi.is_ridge and phi.kind != "tanh_linear":
        ell = np.asarray(phi.ell)
        u = float(ell @ G.mean) + (phi.c if phi.kind == "cosine" else 0.0)
        v = G.quad_form(ell)
        scale = float(np.prod([ell @ h for h in tdirs])) if k else 1.0
        if scale == 0.0:
            return 0.0
        if phi.kind == "abs_sin" and k > 0 and v <= G.tol:
            raise UnsupportedOrder("abs_sin derivative needs a smoothing covariance along l")
        return scale * float(ridge_expectation(phi.ridge_kind, u, v, k))
    if phi.kind == "separable_product" and phi.closed_form:
        if G.rep != "diagonal":
            raise MethodUnavailable("separable closed form needs a diagonal covariance")
        mom = _closed_moments(G, phi, k)
        if k == 0:
            return float(np.prod(mom[:, 0]))
        return float(subset_dp(mom, np.asarray(tdirs)))
    raise MethodUnavailable(f"no closed form for {phi.kind}")


def _has_closed_form(phi, G):
    if phi.kind in ("constant", "cosine", "abs_sin"):
        return True
    return phi.kind == "separable_product" and phi.closed_form and G.rep == "diagonal"


def _has_gh(phi, G):
    if phi.is_ridge:
        return True
    return phi.kind in ("separable_product", "constant") and G.rep == "diagonal"


# ---------------------------------------------------------------- MC helper

def _mc(G, integrand, n_samples, seed, op_id, threads):
    """Mean and standard error of integrand(y) over y ~ N(0, Q) with counter-based streams."""
    sampler = NormalSampler(seed)
    key = sampler.key(op_id)

    def chunk(start, count):
        y = G.color(_kernels.normals(key, start, count, G.N))
        return np.asarray(integrand(y), dtype=float) * np.ones(count)

    vals = _kernels.run_chunks(int(n_samples), chunk, threads)
    m = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return m, se


def _check_inputs(model, phi, x):
    phi.check_dim(model.N)
    x = np.asarray(x, dtype=float)
    if x.shape != (model.N,):
        raise ValidationError(f"x must have length {model.N}")
    return x


def apply(model, phi, s, t, x, method="mc", n_samples=DEFAULT_SAMPLES, seed=0, threads=1, nodes=64):
    """Estimate P_{s,t} phi(x).

    Parameters
    ----------
    model : EvolutionModel
    phi : TestFunction
    s, t : float
        0 <= s <= t <= T.
    x : array_like, shape (N,)
    method : {'mc', 'gauss_hermite', 'closed_form', 'auto'}
        ``auto`` picks closed form, then Gauss-Hermite, then Monte Carlo.
    n_samples, seed, threads
        Monte Carlo controls; the result does not depend on ``threads``.
    nodes : int
        Gauss-Hermite nodes per mode.

    Returns
    -------
    EvalReport
    """
    t0 = time.perf_counter()
    x = _check_inputs(model, phi, x)
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    if s == t:
        return _report(phi(x), 0.0, "closed_form", 0, seed, t0)
    G = prop.state(model, s, t, x)
    if method == "auto":
        method = "closed_form" if _has_closed_form(phi, G) else ("gauss_hermite" if _has_gh(phi, G) else "mc")
    if method == "closed_form":
        if not _has_closed_form(phi, G):
            raise MethodUnavailable(f"no closed form for {phi.kind}")
        return _report(closed_form_value(G, phi), 0.0, "closed_form", 0, seed, t0)
    if method == "gauss_hermite":
        val, err = _gh_value(G, phi, (), (), 0, nodes)
        return _report(val, err, "gauss_hermite", 0, seed, t0)
    m, se = _mc(G, lambda y: phi(G.mean + y), n_samples, seed, "apply", threads)
    return _report(m, se, "mc", n_samples, seed, t0)


# ---------------------------------------------------------------- smoothing context

@dataclass(frozen=True)
class SmoothingContext:
    """Ingredients of the smoothing representation for fixed (s, t, x) and directions.

    ``V[i]`` is the Cameron-Martin functional of ``U h_i`` in state
    coordinates, ``G[i, j] = <Lambda h_i, Lambda h_j>``.
    """

    state: GaussianState
    dirs: np.ndarray
    transported: np.ndarray
    V: np.ndarray
    G: np.ndarray


def build_context(model, E, s, t, x, dirs):
    """Build a :class:`SmoothingContext`; raises NotSmoothing when Lambda(t,s) is not defined on E."""
    lam = prop.lambda_operator(model, E, s, t)
    G = prop.state(model, s, t, x)
    U = prop.transition(model, s, t)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float)).reshape(-1, model.N)
    tr = U.apply(dirs)
    V = np.array([h_hat(G, u).vector for u in tr]).reshape(len(dirs), model.N)
    gram = lam.gram(dirs) if len(dirs) else np.zeros((0, 0))
    return SmoothingContext(G, dirs, tr, V, 0.5 * (gram + gram.T))


def context_from_parts(state, V, G, dirs=None, transported=None):
    """Context from explicit functionals and pairing matrix (used for randomized checks)."""
    V = np.asarray(V, dtype=float)
    n = V.shape[0]
    dirs = np.zeros_like(V) if dirs is None else dirs
    transported = np.zeros_like(V) if transported is None else transported
    return SmoothingContext(state, dirs, transported, V, np.asarray(G, dtype=float).reshape(n, n))


def _in_recursive(H, G, idx):
    memo = {}

    def I(tup):
        if tup in memo:
            return memo[tup]
        if not tup:
            r = np.ones(H.shape[:-1])
        elif len(tup) == 1:
            r = H[..., tup[0]]
        else:
            last, rest = tup[-1], tup[:-1]
            r = H[..., last] * I(rest)
            for pos, j in enumerate(rest):
                if G[j, last] != 0.0:
                    r = r - G[j, last] * I(rest[:pos] + rest[pos + 1:])
        memo[tup] = r
        return r

    return I(tuple(idx))


def in_eval(ctx, y, subset=None):
    """I_n(y)(h_i for i in subset) by the three-term recursion.

    I_0 = 1, I_1 = hat(U h_1)(y) and
    I_n = hat(U h_n)(y) I_{n-1}(h_1..h_{n-1}) - sum_{j<n} G_{jn} I_{n-2}(omit j, n).
    """
    idx = tuple(range(len(ctx.V))) if subset is None else tuple(subset)
    H = np.asarray(y, dtype=float) @ ctx.V.T
    return _in_recursive(H, ctx.G, idx)


def pairing_expansion(ctx, y, subset=None):
    """I_n(y) as the explicit sum over ordered index sequences (reference form).

    Sums (-1)^s prod_k G_{i_{2k-1} i_{2k}} prod_{m unused} hat_m(y) over
    distinct sequences i_1..i_{2s} with i_{2k-1} < i_{2k} and
    i_{2k-1} < i_{2k+1}.
    """
    idx = tuple(range(len(ctx.V))) if subset is None else tuple(subset)
    n = len(idx)
    H = np.asarray(y, dtype=float) @ ctx.V.T
    total = np.zeros(H.shape[:-1])
    for s in range(n // 2 + 1):
        for seq in itertools.permutations(range(n), 2 * s):
            if any(seq[2 * k] >= seq[2 * k + 1] for k in range(s)):
                continue
            if any(seq[2 * k] >= seq[2 * k + 2] for k in range(s - 1)):
                continue
            term = np.full(H.shape[:-1], (-1.0) ** s)
            for k in range(s):
                term = term * ctx.G[idx[seq[2 * k]], idx[seq[2 * k + 1]]]
            used = set(seq)
            for m in range(n):
                if m not in used:
                    term = term * H[..., idx[m]]
            total = total + term
    return total


def _matchings(items):
    """All partial matchings of ``items`` as (pairs, unmatched) tuples."""
    items = tuple(items)
    if not items:
        yield (), ()
        return
    first, rest = items[0], items[1:]
    for pairs, free in _matchings(rest):
        yield pairs, (first,) + free
    for pos, other in enumerate(rest):
        remaining = rest[:pos] + rest[pos + 1:]
        for pairs, free in _matchings(remaining):
            yield ((first, other),) + pairs, free


# ---------------------------------------------------------------- Gauss-Hermite paths

def _gh_value(G, phi, tdirs, V, gram, nodes):
    """Deterministic E[D^k phi(m + Y)(tdirs) I_n(Y)] with error estimate.

    Uses the expansion of I_n over matchings; each remaining product of
    linear functionals against a separable integrand is summed mode by mode.
    """
    vals = [_gh_value_nodes(G, phi, tdirs, V, gram, q) for q in (nodes, max(8, nodes // 2))]
    return vals[0], abs(vals[0] - vals[1])


def _gh_value_nodes(G, phi, tdirs, V, gram, nodes):
    k = len(tdirs)
    n = len(V)
    if phi.kind == "constant":
        if k:
            return 0.0
        if n == 0:
            return phi.c
    if phi.is_ridge and n == 0:
        ell = np.asarray(phi.ell)
        u = float(ell @ G.mean) + (phi.c if phi.kind == "cosine" else 0.0)
        scale = float(np.prod([ell @ h for h in tdirs])) if k else 1.0
        if phi.kind == "abs_sin" and k:
            raise UnsupportedOrder("abs_sin has no derivative of order >= 1")
        return scale * float(gh_ridge(phi.ridge_kind, u, G.quad_form(ell), k, nodes))
    if G.rep != "diagonal" or phi.kind not in ("cosine", "separable_product", "constant"):
        raise NotSeparable(f"Gauss-Hermite path needs a diagonal model and a separable integrand ({phi.kind})")
    if phi.kind == "separable_product" and k:
        return _gh_separable_mixed(G, phi, tdirs, V, gram, nodes)
    mom, pref = gh_factor_moments(G, G.mean, phi, n, nodes)
    if phi.kind == "cosine" and k:
        ell = np.asarray(phi.ell)
        pref = pref * (1j ** k) * float(np.prod([ell @ h for h in tdirs]))
    total = 0.0
    for pairs, free in _matchings(range(n)):
        w = (-1.0) ** len(pairs) * float(np.prod([gram[i, j] for i, j in pairs])) if pairs else 1.0
        if w == 0.0:
            continue
        if free:
            e = subset_dp(mom, np.asarray([V[i] for i in free]))
        else:
            e = np.prod(mom[:, 0])
        total += w * float(np.real(pref * e))
    return total


def _gh_separable_mixed(G, phi, tdirs, V, gram, nodes):
    from .gaussian import gh_nodes
    k = len(tdirs)
    n = len(V)
    x, w = gh_nodes(nodes)
    sd = np.sqrt(G.eigvals)
    y = sd[:, None] * x[None, :]
    z = G.mean[:, None] + y
    mom = np.zeros((G.N, k + 1, n + 1))
    for j, f in enumerate(phi.factors):
        for p in range(k + 1):
            fp = f(z[j], p)
            for r in range(n + 1):
                mom[j, p, r] = (fp * y[j] ** r) @ w
    total = 0.0
    for pairs, free in _matchings(range(n)):
        wgt = (-1.0) ** len(pairs) * float(np.prod([gram[i, j] for i, j in pairs])) if pairs else 1.0
        if wgt == 0.0:
            continue
        coef = np.asarray(list(tdirs) + [V[i] for i in free])
        total += wgt * float(subset_dp(mom, coef, split=k))
    return total


# ---------------------------------------------------------------- derivatives

def _as_dirs(dirs, N):
    dirs = [np.asarray(h, dtype=float) for h in dirs]
    for h in dirs:
        if h.shape != (N,):
            raise ValidationError(f"directions must have length {N}")
    return dirs


def mixed_derivative(model, E, phi, s, t, x, dirs, k, method="mc", n_samples=DEFAULT_SAMPLES, seed=0,
                     threads=1, nodes=64):
    """D^{k+n} P_{s,t} phi(x)(h_1..h_{k+n}) with the first k directions transported.

    The estimate is E[D^k phi(m + Y)(U h_1..U h_k) I_n(Y)(h_{k+1}..h_{k+n})].

    Parameters
    ----------
    E : DirectionSpace
        Used to verify that Lambda(t,s) exists (raises NotSmoothing).
    k : int
        Number of transported directions; needs ``k <= phi.order``.
    method : {'mc', 'gauss_hermite', 'closed_form'}
    """
    t0 = time.perf_counter()
    x = _check_inputs(model, phi, x)
    dirs = _as_dirs(dirs, model.N)
    k = int(k)
    n = len(dirs) - k
    if k < 0 or n < 0:
        raise ValidationError("need 0 <= k <= number of directions")
    if k > phi.order:
        raise UnsupportedOrder(f"{phi.kind} supports transported order up to {phi.order}, requested {k}")
    if n > MAX_SMOOTHING_ORDER:
        raise ValidationError(f"smoothing order is capped at {MAX_SMOOTHING_ORDER}")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    if n == 0 and s == t:
        return _report(phi.derivative(x, dirs), 0.0, "closed_form", 0, seed, t0)
    if n == 0:
        G = prop.state(model, s, t, x)
        tr = prop.transition(model, s, t).apply(np.asarray(dirs).reshape(-1, model.N)) if dirs else []
        V, gram = np.zeros((0, model.N)), np.zeros((0, 0))
    else:
        if not s < t:
            raise ValidationError("smoothing derivatives need s < t")
        ctx = build_context(model, E, s, t, x, dirs)
        G = ctx.state
        tr = ctx.transported[:k]
        V, gram = ctx.V[k:], ctx.G[k:, k:]
    tr = [np.asarray(u) for u in tr]
    if method == "auto":
        method = "closed_form" if _has_closed_form(phi, G) else ("gauss_hermite" if _has_gh(phi, G) and n == 0 else "mc")
    if method == "closed_form":
        if not _has_closed_form(phi, G):
            raise MethodUnavailable(f"no closed form for {phi.kind}")
        utr = list(tr) + list(prop.transition(model, s, t).apply(np.asarray(dirs[k:]).reshape(-1, model.N)))
        return _report(closed_form_value(G, phi, utr), 0.0, "closed_form", 0, seed, t0)
    if method == "gauss_hermite":
        val, err = _gh_value(G, phi, tr, V, gram, nodes)
        return _report(val, err, "gauss_hermite", 0, seed, t0)
    local = SmoothingContext(G, np.asarray(dirs[k:]).reshape(-1, model.N), np.zeros((n, model.N)), V, gram)

    def integrand(y):
        z = G.mean + y
        base = phi.derivative(z, tr) if k else phi(z)
        return base * in_eval(local, y) if n else base

    m, se = _mc(G, integrand, n_samples, seed, "derivative", threads)
    return _report(m, se, "mc", n_samples, seed, t0)


def smoothing_derivative(model, E, phi, s, t, x, dirs, method="mc", n_samples=DEFAULT_SAMPLES, seed=0,
                         threads=1, nodes=64):
    """D^n P_{s,t} phi(x)(h_1..h_n) = E[phi(m + Y) I_n(Y)(h_1..h_n)] for bounded phi.

    Raises
    ------
    NotSmoothing
        If some transported direction has a component outside range Q(t,s).
    """
    if not s < t:
        raise ValidationError("smoothing derivatives need s < t")
    return mixed_derivative(model, E, phi, s, t, x, dirs, 0, method, n_samples, seed, threads, nodes)


def transported_derivative(model, phi, s, t, x, dirs, method="mc", n_samples=DEFAULT_SAMPLES, seed=0,
                           threads=1, nodes=64):
    """D^k P_{s,t} phi(x)(h_1..h_k) = P_{s,t}(D^k phi(.)(U h_1..U h_k))(x)."""
    return mixed_derivative(model, None, phi, s, t, x, dirs, len(dirs), method, n_samples, seed, threads, nodes)


# ---------------------------------------------------------------- oracles

class FDResult(NamedTuple):
    value: float
    coarse: float
    fine: float
    step: float
    error_estimate: float


def default_fd_step(order, scale=1.0):
    """Step for an order-n central difference followed by one Richardson level."""
    eps = np.finfo(float).eps
    return max(1e-5, scale * 2.5e-6, 2.0 * eps ** (1.0 / (order + 4)) * max(1.0, scale))


def fd_derivative(f, x, dirs, base_step=None):
    """Iterated central differences of ``f`` along ``dirs`` with one Richardson step.

    Differences are taken along the unit directions, so ``base_step`` is the
    spatial displacement, and the result is scaled by the product of the norms.

    Parameters
    ----------
    f : callable
        Maps a state vector to a float.
    x : array_like
    dirs : sequence of direction vectors (order <= 4)
    base_step : float, optional
        Defaults to :func:`default_fd_step`.

    Returns
    -------
    FDResult
        Extrapolated value and both difference levels.
    """
    x = np.asarray(x, dtype=float)
    dirs = [np.asarray(h, dtype=float) for h in dirs]
    n = len(dirs)
    if n > 4:
        raise ValidationError("finite differences are limited to order 4")
    if n == 0:
        v = float(f(x))
        return FDResult(v, v, v, 0.0, 0.0)
    delta = default_fd_step(n, float(np.max(np.abs(x))) if x.size else 1.0) if base_step is None else float(base_step)
    norms = [float(np.linalg.norm(h)) for h in dirs]
    if min(norms) == 0.0:
        return FDResult(0.0, 0.0, 0.0, delta, 0.0)
    units = [h / nh for h, nh in zip(dirs, norms)]
    scale = float(np.prod(norms))

    def level(d):
        total = 0.0
        for signs in itertools.product((1.0, -1.0), repeat=n):
            shift = sum(sg * h for sg, h in zip(signs, units))
            total += float(np.prod(signs)) * float(f(x + d * shift))
        return scale * total / (2.0 * d) ** n

    coarse = level(delta)
    fine = level(0.5 * delta)
    value = (4.0 * fine - coarse) / 3.0
    return FDResult(value, coarse, fine, delta, abs(value - fine))


def sde_expectation(model, phi, s, t, x, n_paths=DEFAULT_SAMPLES, n_steps=1024, seed=0, threads=1):
    """Euler-Maruyama estimate of E phi(X_t) for dX = (A X + f) dt + B dW, X_s = x."""
    t0 = time.perf_counter()
    x = _check_inputs(model, phi, x)
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    if s == t:
        return _report(phi(x), 0.0, "sde", n_paths, seed, t0)
    dt = (t - s) / n_steps
    grid = s + dt * np.arange(n_steps)
    Ast, Bst, fst = model.A_at(grid), model.B_at(grid), model.f_at(grid)
    key = NormalSampler(seed).key("sde")
    X = _kernels.run_chunks(int(n_paths),
                            lambda a, c: _kernels.euler_maruyama(Ast, Bst, fst, x, dt, key, a, c), threads)
    vals = np.asarray(phi(X), dtype=float)
    m = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return _report(m, se, "sde", n_paths, seed, t0)


def em_gaussian_law(model, s, t, x, n_steps):
    """Exact law of the Euler-Maruyama iterate (Gaussian for linear equations)."""
    dt = (t - s) / n_steps
    m = np.asarray(x, dtype=float).copy()
    C = np.zeros((model.N, model.N))
    I = np.eye(model.N)
    for j in range(n_steps):
        tau = s + j * dt
        M = I + dt * model.A_at(tau)
        B = model.B_at(tau)
        m = M @ m + dt * model.f_at(tau)
        C = M @ C @ M.T + dt * (B @ B.T)
    return GaussianState(m, cov=C)


def chapman_defect(model, phi, s, r, t, x):
    """|P_{s,t} phi(x) - P_{s,r}(P_{r,t} phi)(x)| for cosine phi, all in closed form.

    P_{r,t} cos(<l, .> + c) is again a damped cosine with direction
    U(t,r)^T l, which makes the outer application closed-form too.
    """
    if phi.kind != "cosine":
        raise MethodUnavailable("Chapman-Kolmogorov check needs a cosine test function")
    if not (s <= r <= t):
        raise ValidationError("require s <= r <= t")
    x = _check_inputs(model, phi, x)
    ell = np.asarray(phi.ell)
    direct = closed_form_value(prop.state(model, s, t, x), phi)
    Urt = prop.transition(model, r, t).matrix()
    g_rt = prop.mean(model, r, t, np.zeros(model.N))
    amp = math.exp(-0.5 * prop.covariance(model, r, t).quad_form(ell))
    ell2 = Urt.T @ ell
    c2 = float(ell @ g_rt) + phi.c
    inner = prop.state(model, s, r, x)
    composed = amp * math.cos(float(ell2 @ inner.mean) + c2) * math.exp(-0.5 * inner.quad_form(ell2))
    return abs(direct - composed)
