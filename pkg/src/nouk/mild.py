"""Mild solution u = u0 + u1 of the backward problem and its directional derivatives.

u0(s, x) = P_{s,t} phi(x) and u1(s, x) = -int_s^t P_{s,sigma} psi(sigma, .)(x) dsigma.
The time integral uses Gauss-Legendre panels graded geometrically toward
sigma = s, where derivative integrands blow up like (sigma - s)^(-beta); the
innermost panel uses Gauss-Jacobi nodes for the weight (sigma - s)^(-beta).
"""
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

from . import propagator as prop
from . import semigroup as sg
from .errors import DivergentSingularity, ValidationError

__all__ = ["QuadSpec", "time_mesh", "u0", "u1", "mild_solution", "mild_derivative", "u1_derivative"]


@dataclass(frozen=True)
class QuadSpec:
    """Composite Gauss-Legendre rule on [s, t].

    Parameters
    ----------
    panels : int
        Number of graded panels; the first one has width (t - s) * ratio**-panels.
    ratio : float
        Geometric grading ratio (> 1).
    nodes : int
        Gauss-Legendre nodes per panel.
    theta_hint : float, optional
        Blow-up exponent beta of the integrand at sigma = s; when given, the
        innermost panel carries the weight (sigma - s)^(-beta) exactly.
    mesh : {'graded', 'uniform'}
        ``uniform`` splits [s, t] into ``panels + 1`` equal panels (for comparisons).
    """

    panels: int = 20
    ratio: float = 2.0
    nodes: int = 8
    theta_hint: float = None
    mesh: str = "graded"

    def __post_init__(self):
        if self.panels < 1:
            raise ValidationError("panels must be >= 1")
        if not self.ratio > 1.0:
            raise ValidationError("grading ratio must be > 1")
        if self.nodes < 2:
            raise ValidationError("need at least 2 nodes per panel")
        if self.mesh not in ("graded", "uniform"):
            raise ValidationError(f"unknown mesh {self.mesh!r}")
        if self.theta_hint is not None and not 0.0 <= self.theta_hint < 1.0:
            raise ValidationError("theta_hint must be in [0, 1)")


def time_mesh(quad, s, t):
    """Panel end points from s to t."""
    P = quad.panels
    if quad.mesh == "uniform":
        return np.linspace(s, t, P + 2)
    inner = s + (t - s) * quad.ratio ** (-np.arange(P, -1, -1, dtype=float))
    return np.concatenate(([s], inner))


def _rule(quad, s, t, nodes):
    edges = time_mesh(quad, s, t)
    x, w = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    sig = 0.5 * (a + b) + 0.5 * (b - a) * x
    wts = 0.5 * (b - a) * w
    beta = quad.theta_hint or 0.0
    if beta > 0.0 and quad.mesh == "graded":
        # weight (1 + x)^(-beta) on [-1, 1]; the integrand is divided by it at the nodes
        xj, wj = roots_jacobi(nodes, 0.0, -beta)
        sig[0] = s + 0.5 * (edges[1] - s) * (1.0 + xj)
        wts[0] = 0.5 * (edges[1] - s) * wj * (1.0 + xj) ** beta
    return sig.ravel(), wts.ravel()


def _integrate(fn, quad, s, t):
    """Composite rule with error estimate from the half-node rule plus inner uncertainty."""
    total, unc_inner, n_samples = 0.0, 0.0, 0
    sig, wts = _rule(quad, s, t, quad.nodes)
    for sigma, w in zip(sig, wts):
        rep = fn(float(sigma))
        total += w * rep.value
        unc_inner += abs(w) * rep.uncertainty
        n_samples += rep.n_samples
    coarse = 0.0
    sig2, wts2 = _rule(quad, s, t, max(1, quad.nodes // 2))
    for sigma, w in zip(sig2, wts2):
        coarse += w * fn(float(sigma)).value
    return total, abs(total - coarse) + unc_inner, n_samples


def _inner_method(phi, G):
    if sg._has_closed_form(phi, G):
        return "closed_form"
    if sg._has_gh(phi, G):
        return "gauss_hermite"
    return "mc"


def u0(model, phi, s, t, x, method="auto", **kw):
    """u0(s, x) = P_{s,t} phi(x)."""
    return sg.apply(model, phi, s, t, x, method=method, **kw)


def u1(model, psi, s, t, x, quad=QuadSpec(), method="auto", n_samples=sg.DEFAULT_SAMPLES, seed=0, threads=1):
    """u1(s, x) = -int_s^t rho(sigma) P_{s,sigma} phi_psi(x) dsigma.

    Inner values are closed-form when available, otherwise Gauss-Hermite or
    Monte Carlo with common random numbers across quadrature nodes.
    """
    t0 = time.perf_counter()
    if not s <= t:
        raise ValidationError("require s <= t")
    x = np.asarray(x, dtype=float)
    if s == t or psi.is_zero:
        return sg.EvalReport(0.0, 0.0, "closed_form", 0, seed, time.perf_counter() - t0)
    if psi.phi.kind == "constant" and psi.rho.exact_antiderivative:
        val = -psi.phi.c * psi.rho.integral(s, t)
        return sg.EvalReport(float(val), 0.0, "closed_form", 0, seed, time.perf_counter() - t0)
    methods = set()

    def inner(sigma):
        m = method
        if m == "auto":
            m = _inner_method(psi.phi, prop.covariance(model, s, sigma)) if sigma > s else "closed_form"
        rep = sg.apply(model, psi.phi, s, sigma, x, method=m, n_samples=n_samples, seed=seed, threads=threads)
        methods.add(rep.method)
        r = float(psi.rho(sigma))
        return sg.EvalReport(r * rep.value, abs(r) * rep.uncertainty, rep.method, rep.n_samples, seed)

    val, unc, ns = _integrate(inner, quad, s, t)
    label = "mc" if "mc" in methods else ("gauss_hermite" if "gauss_hermite" in methods else "closed_form")
    return sg._report(-val, unc, label, ns, seed, t0)


def mild_solution(model, phi, psi, s, t, x, quad=QuadSpec(), method="auto", n_samples=sg.DEFAULT_SAMPLES,
                  seed=0, threads=1):
    """u(s, x) = u0 + u1 with combined uncertainty."""
    t0 = time.perf_counter()
    a = u0(model, phi, s, t, x, method=method, n_samples=n_samples, seed=seed, threads=threads)
    b = u1(model, psi, s, t, x, quad, method, n_samples, seed, threads)
    method_label = a.method if a.method == b.method else "mc" if "mc" in (a.method, b.method) else "gauss_hermite"
    return sg.EvalReport(a.value + b.value, a.uncertainty + b.uncertainty, method_label,
                         a.n_samples + b.n_samples, seed, time.perf_counter() - t0)


def _split(phi, n, regularity=None):
    """Transported order k and the effective regularity used for the singularity check."""
    k = min(n, phi.order)
    alpha = k if regularity is None else max(k, min(n, regularity))
    return k, alpha


def u1_derivative(model, E, psi, s, t, x, dirs, theta, quad=QuadSpec(), method="auto",
                  n_samples=sg.DEFAULT_SAMPLES, seed=0, threads=1, psi_regularity=None):
    """-int_s^t rho(sigma) D^n P_{s,sigma} phi_psi(x)(dirs) dsigma.

    The first k = min(n, analytic order) directions are transported and the
    rest go through the smoothing weights, so the integrand behaves like
    (sigma - s)^(-(n - k) theta).

    Raises
    ------
    DivergentSingularity
        When (n - alpha) * theta >= 1, alpha being k or ``psi_regularity``.
    """
    t0 = time.perf_counter()
    n = len(dirs)
    k, alpha = _split(psi.phi, n, psi_regularity)
    beta = (n - alpha) * theta
    if beta >= 1.0:
        raise DivergentSingularity(
            f"integrand singularity (sigma - s)^-{beta:g} is not integrable: need n < {alpha} + 1/theta")
    if s == t or psi.is_zero or psi.phi.kind == "constant":
        return sg.EvalReport(0.0, 0.0, "closed_form", 0, seed, time.perf_counter() - t0)
    x = np.asarray(x, dtype=float)
    methods = set()

    def inner(sigma):
        r = float(psi.rho(sigma))
        if sigma <= s:
            if k < n:
                raise ValidationError("quadrature node at the singular end point")
            val = psi.phi.derivative(x, dirs)
            return sg.EvalReport(r * float(val), 0.0, "closed_form", 0, seed)
        m = method
        if m == "auto":
            m = _inner_method(psi.phi, prop.covariance(model, s, sigma))
            if m == "gauss_hermite" and psi.phi.is_ridge and k < n:
                m = "mc"
        rep = sg.mixed_derivative(model, E, psi.phi, s, sigma, x, dirs, k, method=m, n_samples=n_samples,
                                  seed=seed, threads=threads)
        methods.add(rep.method)
        return sg.EvalReport(r * rep.value, abs(r) * rep.uncertainty, rep.method, rep.n_samples, seed)

    if quad.theta_hint is None and beta > 0:
        quad = QuadSpec(quad.panels, quad.ratio, quad.nodes, min(beta, 0.999), quad.mesh)
    val, unc, ns = _integrate(inner, quad, s, t)
    label = "mc" if "mc" in methods else ("gauss_hermite" if "gauss_hermite" in methods else "closed_form")
    return sg._report(-val, unc, label, ns, seed, t0)


def mild_derivative(model, E, phi, psi, s, t, x, dirs, theta, quad=QuadSpec(), method="auto",
                    n_samples=sg.DEFAULT_SAMPLES, seed=0, threads=1, psi_regularity=None):
    """D^n u(s, x)(dirs) = D^n u0 + D^n u1.

    Parameters
    ----------
    theta : float
        Blow-up exponent of the smoothing estimates, supplied by the caller.
    psi_regularity : int, optional
        Spatial regularity of psi beyond its analytic order (1 for Lipschitz
        data); only affects the integrability check.
    """
    t0 = time.perf_counter()
    dirs = [np.asarray(h, dtype=float) for h in dirs]
    x = np.asarray(x, dtype=float)
    b = u1_derivative(model, E, psi, s, t, x, dirs, theta, quad, method, n_samples, seed, threads, psi_regularity)
    k0 = min(len(dirs), phi.order)
    a = sg.mixed_derivative(model, E, phi, s, t, x, dirs, k0, method=method, n_samples=n_samples, seed=seed,
                            threads=threads)
    label = a.method if a.method == b.method else "mc" if "mc" in (a.method, b.method) else "gauss_hermite"
    return sg.EvalReport(a.value + b.value, a.uncertainty + b.uncertainty, label, a.n_samples + b.n_samples,
                         seed, time.perf_counter() - t0)
