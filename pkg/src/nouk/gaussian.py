"""Gaussian states, deterministic sampling, the Cameron-Martin functional and density."""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import IntegratorFailure, KernelComponent, NotSeparable, ValidationError
from .functions import profile

__all__ = ["GaussianState", "NormalSampler", "HHatFunctional", "sample", "h_hat", "cm_density",
           "gh_expectation", "gh_nodes", "RANK_ULP"]

RANK_ULP = 2.0 ** -40


class GaussianState:
    """Mean and positive-semidefinite covariance with cached factorizations.

    Parameters
    ----------
    mean : array_like, shape (N,)
    q : array_like, shape (N,), optional
        Diagonal covariance.
    cov : array_like, shape (N, N), optional
        Dense covariance; symmetrized and eigendecomposed.  Eigenvalues
        below ``N * 2**-40 * max eigenvalue`` count as zero.
    """

    def __init__(self, mean=None, q=None, cov=None):
        if (q is None) == (cov is None):
            raise ValueError("give exactly one of q and cov")
        if q is not None:
            q = np.array(q, dtype=float)
            N = q.size
            self.rep = "diagonal"
            lam = q
            self.eigvecs = None
        else:
            C = np.array(cov, dtype=float)
            N = C.shape[0]
            if C.shape != (N, N):
                raise ValidationError("covariance must be square")
            scale = float(np.max(np.abs(C))) if C.size else 0.0
            asym = float(np.max(np.abs(C - C.T))) if C.size else 0.0
            if asym > 1e-8 * max(scale, 1e-300):
                raise ValidationError("covariance is not symmetric")
            C = 0.5 * (C + C.T)
            self.rep = "dense"
            lam, vecs = np.linalg.eigh(C)
            self.eigvecs = vecs
            self._cov = C
        lam_max = float(np.max(lam)) if lam.size else 0.0
        if np.any(lam < -(1e-9 * max(lam_max, 0.0) + 1e-13)):
            raise IntegratorFailure("covariance has a significantly negative eigenvalue")
        lam = np.clip(lam, 0.0, None)
        self.N = N
        self.tol = N * RANK_ULP * max(lam_max, 0.0)
        self.positive = lam > self.tol
        self.eigvals = lam
        self.mean = np.zeros(N) if mean is None else np.array(mean, dtype=float)
        if self.mean.shape != (N,):
            raise ValidationError("mean has the wrong dimension")

    @property
    def rank(self):
        return int(np.sum(self.positive))

    @property
    def trace(self):
        return float(np.sum(self.eigvals))

    def with_mean(self, mean):
        out = object.__new__(GaussianState)
        out.__dict__.update(self.__dict__)
        out.mean = np.array(mean, dtype=float)
        return out

    def matrix(self):
        if self.rep == "diagonal":
            return np.diag(self.eigvals)
        return self._cov

    def _fn(self, fn):
        vals = np.where(self.positive, fn(np.where(self.positive, self.eigvals, 1.0)), 0.0)
        return vals

    def sqrt_factor(self):
        """S with S S^T = Q (eigenbasis scaled by square roots)."""
        r = np.sqrt(self.eigvals)
        if self.rep == "diagonal":
            return np.diag(r)
        return self.eigvecs * r

    def sqrt(self):
        """Symmetric square root Q^(1/2)."""
        r = np.sqrt(self.eigvals)
        if self.rep == "diagonal":
            return np.diag(r)
        return (self.eigvecs * r) @ self.eigvecs.T

    def pinv_sqrt(self):
        """Pseudo-inverse square root (zero on the kernel)."""
        r = self._fn(lambda v: 1.0 / np.sqrt(v))
        if self.rep == "diagonal":
            return np.diag(r)
        return (self.eigvecs * r) @ self.eigvecs.T

    def pinv(self):
        r = self._fn(lambda v: 1.0 / v)
        if self.rep == "diagonal":
            return np.diag(r)
        return (self.eigvecs * r) @ self.eigvecs.T

    def to_eigen(self, g):
        g = np.asarray(g, dtype=float)
        return g if self.rep == "diagonal" else g @ self.eigvecs

    def from_eigen(self, c):
        c = np.asarray(c, dtype=float)
        return c if self.rep == "diagonal" else c @ self.eigvecs.T

    def quad_form(self, ell):
        """<Q ell, ell>."""
        c = self.to_eigen(ell)
        return float(np.sum(self.eigvals * c * c))

    def color(self, z):
        """Map standard normals z (..., N) to N(0, Q) samples."""
        r = np.sqrt(self.eigvals)
        if self.rep == "diagonal":
            return z * r
        return (z * r) @ self.eigvecs.T


@dataclass(frozen=True)
class NormalSampler:
    """Counter-based standard-normal source.

    Variate ``(i, j)`` of operation ``op_id`` depends only on
    ``(seed, op_id, i, j)``; no generator state is shared.
    """

    seed: int = 0

    def key(self, op_id):
        return _kernels.stream_key(self.seed, op_id)

    def normals(self, op_id, start, n, dim, threads=1):
        key = self.key(op_id)
        return _kernels.run_chunks(int(n), lambda a, c: _kernels.normals(key, start + a, c, dim),
                                   threads).reshape(int(n), dim)

    def uniforms(self, op_id, start, n, dim, threads=1):
        key = self.key(op_id)
        return _kernels.run_chunks(int(n), lambda a, c: _kernels.uniforms(key, start + a, c, dim),
                                   threads).reshape(int(n), dim)


def sample(cov, n, seed, op_id, threads=1, start=0):
    """Draw ``n`` samples of N(mean, Q) following the per-sample stream discipline.

    Parameters
    ----------
    cov : GaussianState
    n : int
    seed : int
        64-bit seed.
    op_id : str or int
        Operation identifier; different operations get independent streams.
    threads : int
        Worker threads; does not change the output.
    start : int
        Index of the first sample.

    Returns
    -------
    ndarray, shape (n, N)
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    z = NormalSampler(seed).normals(op_id, start, n, cov.N, threads)
    return cov.mean + cov.color(z)


@dataclass(frozen=True)
class HHatFunctional:
    """Linear functional y -> sum_k c_k <y, e_k> with c_k = g_k / lambda_k.

    ``vector`` is the same functional in state coordinates (Q^+ g) and
    ``norm_sq`` equals ||Q^(-1/2) g||^2, its variance under N(0, Q).
    """

    coef: np.ndarray
    vector: np.ndarray
    norm_sq: float

    def __call__(self, y):
        return np.asarray(y, dtype=float) @ self.vector


def h_hat(cov, g, rtol=1e-10):
    """Cameron-Martin functional of ``g`` for the covariance ``cov``.

    Raises
    ------
    KernelComponent
        If ``g`` has a component (beyond ``rtol`` relative) along an
        eigenvector with zero eigenvalue; the index is 1-based.
    """
    g = np.asarray(g, dtype=float)
    ge = cov.to_eigen(g)
    scale = float(np.max(np.abs(g))) if g.size else 0.0
    bad = (~cov.positive) & (np.abs(ge) > rtol * scale)
    if np.any(bad):
        raise KernelComponent(int(np.argmax(bad)) + 1)
    coef = np.where(cov.positive, ge / np.where(cov.positive, cov.eigvals, 1.0), 0.0)
    norm_sq = float(np.sum(coef * ge))
    return HHatFunctional(coef, cov.from_eigen(coef), norm_sq)


def cm_density(cov, h, y):
    """Density of N(h, Q) with respect to N(0, Q) at ``y``: exp(-|Q^(-1/2) h|^2 / 2 + h_hat(y))."""
    hh = h_hat(cov, h)
    return np.exp(-0.5 * hh.norm_sq + hh(y))


_GH_CACHE = {}


def gh_nodes(n):
    """Probabilists' Gauss-Hermite nodes and weights normalized to sum 1."""
    if not 1 <= n <= 150:
        raise ValidationError("Gauss-Hermite node count must be in 1..150")
    if n not in _GH_CACHE:
        x, w = np.polynomial.hermite_e.hermegauss(n)
        _GH_CACHE[n] = (x, w / math.sqrt(2.0 * math.pi))
    return _GH_CACHE[n]


def gh_factor_moments(cov, mean, phi, order, nodes=64):
    """Per-mode values ``E[f_j(m_j + Y_j) Y_j^p]`` for p = 0..order.

    ``phi`` must be cosine (factors e^{i l_j z}, complex) or a separable
    product.  Returns ``(moments, prefactor)`` where the expectation of the
    full product is ``Re(prefactor * prod_j moments[j, 0])``.
    """
    if cov.rep != "diagonal":
        raise NotSeparable("Gauss-Hermite path needs a diagonal covariance")
    x, w = gh_nodes(nodes)
    sd = np.sqrt(cov.eigvals)
    y = sd[:, None] * x[None, :]
    z = np.asarray(mean, dtype=float)[:, None] + y
    if phi.kind == "cosine":
        ell = np.asarray(phi.ell)
        vals = np.exp(1j * ell[:, None] * z)
        pref = np.exp(1j * phi.c)
    elif phi.kind == "separable_product":
        vals = np.stack([f(z[j]) for j, f in enumerate(phi.factors)])
        pref = 1.0
    elif phi.kind == "constant":
        vals = np.ones_like(z)
        pref = phi.c
    else:
        raise NotSeparable(f"{phi.kind} is not separable")
    mom = np.stack([(vals * y ** p) @ w for p in range(order + 1)], axis=1)
    return mom, pref


def gh_expectation(cov, mean, phi, nodes_per_mode=64):
    """Tensorized Gauss-Hermite value of E phi(mean + Y), Y ~ N(0, Q) diagonal.

    Raises
    ------
    NotSeparable
        For test functions that do not factor over modes.
    """
    if phi.kind == "constant":
        return phi.c
    mom, pref = gh_factor_moments(cov, mean, phi, 0, nodes_per_mode)
    return float(np.real(pref * np.prod(mom[:, 0])))


def gh_ridge(kind, u, v, n=0, nodes=64):
    """E g^(n)(u + sqrt(v) Z) for a 1-d profile g by Gauss-Hermite."""
    x, w = gh_nodes(nodes)
    u = np.asarray(u, dtype=float)
    return profile(kind, u[..., None] + math.sqrt(max(v, 0.0)) * x, n) @ w
