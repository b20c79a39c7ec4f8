"""Catalog test functions phi(x) and source terms psi(sigma, x) = rho(sigma) phi(x)."""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

from .config import fmt_float as _f
from .errors import UnsupportedOrder, ValidationError
from .timefn import TimeFn

__all__ = ["Factor", "TestFunction", "SourceTerm", "constant", "cosine", "tanh_linear",
           "abs_sin", "separable_product", "subset_dp"]

INF_ORDER = 10 ** 6


@lru_cache(maxsize=None)
def _tanh_poly(n):
    """Coefficients of p_n with d^n/du^n tanh(u) = p_n(tanh u)."""
    p = np.array([0.0, 1.0])
    for _ in range(n):
        p = P.polymul(P.polyder(p), [1.0, 0.0, -1.0])
    return p


def profile(kind, u, n=0):
    """n-th derivative of the 1-d profile ``kind`` at u."""
    if kind == "cos":
        return np.cos(u + n * (math.pi / 2))
    if kind == "tanh":
        return P.polyval(np.tanh(u), _tanh_poly(n))
    if kind == "abs_sin":
        if n > 0:
            raise UnsupportedOrder("abs_sin has no derivative of order >= 1")
        return np.abs(np.sin(u))
    raise ValueError(kind)


@dataclass(frozen=True)
class Factor:
    """One-dimensional factor ``const(c)``, ``cos(l*z + c)``, ``tanh(l*z)`` or ``abs_sin(l*z)``."""

    kind: str
    l: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "cos", "tanh", "abs_sin"):
            raise ValidationError(f"unknown separable factor {self.kind!r}")
        object.__setattr__(self, "l", float(self.l))
        object.__setattr__(self, "c", float(self.c))

    @property
    def order(self):
        return 0 if self.kind == "abs_sin" else INF_ORDER

    @property
    def bound(self):
        return abs(self.c) if self.kind == "const" else 1.0

    def __call__(self, z, n=0):
        z = np.asarray(z, dtype=float)
        if self.kind == "const":
            return np.full_like(z, self.c if n == 0 else 0.0)
        if self.kind == "abs_sin" and n > 0:
            raise UnsupportedOrder("abs_sin has no derivative of order >= 1")
        phase = self.c if self.kind == "cos" else 0.0
        return self.l ** n * profile(self.kind, self.l * z + phase, n)

    def to_text(self):
        if self.kind == "const":
            return f"const({_f(self.c)})"
        if self.kind == "cos":
            return f"cos({_f(self.l)}, {_f(self.c)})"
        return f"{self.kind}({_f(self.l)})"


def subset_dp(vals, coef, split=None):
    """Sum over assignments of k directions to N modes.

    Computes ``sum_{j_1..j_k} prod_i coef[i, j_i] * prod_j vals[j, #{i: j_i = j}]``
    in O(N 3^k) operations.  ``vals`` has shape ``(N, k+1, ...)`` and ``coef``
    shape ``(k, N)``.  With ``split = k1`` the directions form two groups
    (the first k1 and the rest) and ``vals`` has shape ``(N, k1+1, k-k1+1, ...)``,
    indexed by the number of directions from each group assigned to the mode.
    """
    vals = np.asarray(vals)
    coef = np.asarray(coef)
    N = vals.shape[0]
    k = coef.shape[0]
    full = (1 << k) - 1
    lead = 1 if split is None else 2
    batch = vals.shape[1 + lead:]
    F = np.zeros((full + 1,) + batch, dtype=np.result_type(vals, coef))
    F[0] = 1.0
    if split is None:
        index = [(bin(a).count("1"),) for a in range(full + 1)]
    else:
        low = (1 << split) - 1
        index = [(bin(a & low).count("1"), bin(a >> split).count("1")) for a in range(full + 1)]
    for j in range(N):
        weight = np.ones(full + 1, dtype=coef.dtype)
        for a in range(1, full + 1):
            bit = (a & -a).bit_length() - 1
            weight[a] = weight[a & (a - 1)] * coef[bit, j]
        G = np.zeros_like(F)
        for S in range(full + 1):
            A = S
            while True:
                if weight[A] != 0:
                    G[S] = G[S] + F[S ^ A] * (weight[A] * vals[(j,) + index[A]])
                if A == 0:
                    break
                A = (A - 1) & S
        F = G
    return F[full]


@dataclass(frozen=True)
class TestFunction:
    """Bounded test function from the catalog.

    Parameters
    ----------
    kind : str
        ``constant``, ``cosine``, ``tanh_linear``, ``abs_sin`` or
        ``separable_product``.
    ell : tuple of float
        Direction of the linear form for ridge functions.
    c : float
        Phase for ``cosine``, value for ``constant``.
    factors : tuple of Factor
        Per-mode factors for ``separable_product``.
    """

    __test__ = False

    kind: str
    ell: tuple = ()
    c: float = 0.0
    factors: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "tanh_linear", "abs_sin", "separable_product"):
            raise ValidationError(f"unknown test function {self.kind!r}")
        object.__setattr__(self, "ell", tuple(float(v) for v in self.ell))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.kind in ("cosine", "tanh_linear", "abs_sin") and not self.ell:
            raise ValidationError(f"{self.kind} needs a direction vector")
        if self.kind == "separable_product" and not self.factors:
            raise ValidationError("separable_product needs factors")

    @property
    def dim(self):
        if self.kind == "constant":
            return None
        if self.kind == "separable_product":
            return len(self.factors)
        return len(self.ell)

    @property
    def is_ridge(self):
        return self.kind in ("cosine", "tanh_linear", "abs_sin")

    @property
    def ridge_kind(self):
        return {"cosine": "cos", "tanh_linear": "tanh", "abs_sin": "abs_sin"}[self.kind]

    @property
    def bound(self):
        if self.kind == "constant":
            return abs(self.c)
        if self.kind == "separable_product":
            return float(np.prod([f.bound for f in self.factors]))
        return 1.0

    @property
    def order(self):
        """Highest order of analytic directional derivatives available."""
        if self.kind == "abs_sin":
            return 0
        if self.kind == "separable_product":
            return min(f.order for f in self.factors)
        return INF_ORDER

    @property
    def regularity(self):
        """Hoelder-type regularity index: the analytic order, or 1 for Lipschitz data."""
        if self.kind == "abs_sin":
            return 1
        if self.kind == "separable_product" and self.order == 0:
            return 1
        return self.order

    @property
    def closed_form(self):
        if self.kind in ("constant", "cosine"):
            return True
        if self.kind == "separable_product":
            return all(f.kind in ("const", "cos") for f in self.factors)
        return False

    @property
    def is_zero(self):
        return self.kind == "constant" and self.c == 0.0

    def check_dim(self, N):
        if self.dim is not None and self.dim != N:
            raise ValidationError(f"test function has dimension {self.dim}, model has N = {N}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.c) if x.ndim > 1 else self.c
        if self.kind == "separable_product":
            out = np.ones(x.shape[:-1])
            for j, f in enumerate(self.factors):
                out = out * f(x[..., j])
            return out if out.ndim else float(out)
        u = x @ np.asarray(self.ell) + (self.c if self.kind == "cosine" else 0.0)
        out = profile(self.ridge_kind, u)
        return out if np.ndim(out) else float(out)

    def derivative(self, x, dirs):
        """Exact directional derivative ``D^k phi(x)(h_1, ..., h_k)``.

        Parameters
        ----------
        x : array_like, shape (..., N)
        dirs : sequence of k direction vectors
        """
        x = np.asarray(x, dtype=float)
        dirs = [np.asarray(h, dtype=float) for h in dirs]
        k = len(dirs)
        if k == 0:
            return self(x)
        if k > self.order:
            raise UnsupportedOrder(f"{self.kind} supports derivatives up to order {self.order}, requested {k}")
        if self.kind == "constant":
            return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        if self.kind == "separable_product":
            vals = np.stack([np.stack([f(x[..., j], n) for n in range(k + 1)]) for j, f in enumerate(self.factors)])
            out = subset_dp(vals, np.stack(dirs))
            return out if np.ndim(out) else float(out)
        ell = np.asarray(self.ell)
        u = x @ ell + (self.c if self.kind == "cosine" else 0.0)
        scale = float(np.prod([ell @ h for h in dirs]))
        out = scale * profile(self.ridge_kind, u, k)
        return out if np.ndim(out) else float(out)

    def to_lines(self):
        lines = [f"kind = {self.kind}"]
        if self.kind in ("cosine", "tanh_linear", "abs_sin"):
            lines.append("l = [" + ", ".join(_f(v) for v in self.ell) + "]")
        if self.kind in ("cosine", "constant"):
            lines.append(f"c = {_f(self.c)}")
        if self.kind == "separable_product":
            lines.append("factors = [" + ", ".join(f.to_text() for f in self.factors) + "]")
        return lines


@dataclass(frozen=True)
class SourceTerm:
    """Source ``psi(sigma, x) = rho(sigma) * phi(x)``."""

    rho: TimeFn
    phi: TestFunction

    def __call__(self, sigma, x):
        return self.rho(sigma) * self.phi(x)

    def bound(self, T):
        return self.rho.sup_abs(T) * self.phi.bound

    @property
    def is_zero(self):
        return self.rho.is_zero or self.phi.is_zero


def constant(c):
    return TestFunction("constant", c=c)


def cosine(ell, c=0.0):
    return TestFunction("cosine", ell=tuple(ell), c=c)


def tanh_linear(ell):
    return TestFunction("tanh_linear", ell=tuple(ell))


def abs_sin(ell):
    return TestFunction("abs_sin", ell=tuple(ell))


def separable_product(factors):
    return TestFunction("separable_product", factors=tuple(factors))
