"""Closed catalog of scalar time functions with exact antiderivatives."""
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .config import fmt_value
from .errors import ValidationError

__all__ = ["TimeFn", "const", "poly", "trig", "preset_ak", "preset_bk", "preset_heat", "ZERO"]

_KINDS = ("const", "poly", "trig", "preset_ak", "preset_bk", "preset_heat")


@dataclass(frozen=True)
class TimeFn:
    """A scalar function of time drawn from a fixed catalog.

    Parameters
    ----------
    kind : str
        One of ``const``, ``poly``, ``trig``, ``preset_ak``, ``preset_bk``,
        ``preset_heat``.
    params : tuple of float
        ``const``: ``(c,)``; ``poly``: coefficients from the constant term up;
        ``trig``: ``(amplitude, frequency, phase, offset)``;
        ``preset_ak``/``preset_heat``: ``(k,)``; ``preset_bk``: ``(k, c)``.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown time function {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        if not all(math.isfinite(p) for p in params):
            raise ValidationError(f"non-finite parameter in {self.kind}")
        need = {"const": 1, "trig": 4, "preset_ak": 1, "preset_bk": 2, "preset_heat": 1}
        if self.kind in need and len(params) != need[self.kind]:
            raise ValidationError(f"{self.kind} takes {need[self.kind]} parameter(s), got {len(params)}")
        if self.kind == "poly" and not params:
            raise ValidationError("poly needs at least one coefficient")
        if self.kind.startswith("preset") and (params[0] < 1 or params[0] != int(params[0])):
            raise ValidationError(f"{self.kind}: mode index must be a positive integer")
        object.__setattr__(self, "params", params)

    @property
    def exact_antiderivative(self):
        return True

    @property
    def is_constant(self):
        if self.kind in ("const", "preset_heat"):
            return True
        if self.kind == "poly":
            return all(c == 0.0 for c in self.params[1:])
        if self.kind == "trig":
            return self.params[0] == 0.0 or self.params[1] == 0.0
        return False

    @property
    def is_zero(self):
        return self.is_constant and self(0.0) == 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        k = self.kind
        if k == "const":
            out = np.full_like(t, p[0])
        elif k == "poly":
            out = np.polynomial.polynomial.polyval(t, p)
        elif k == "trig":
            out = p[0] * np.sin(p[1] * t + p[2]) + p[3]
        elif k == "preset_ak":
            out = -p[0] ** 2 * (t ** p[0] + 1.0)
        elif k == "preset_bk":
            out = np.sin(p[0] * t) + p[1]
        else:
            out = np.full_like(t, -p[0] ** 2 * math.pi ** 2)
        return out if out.ndim else float(out)

    def antiderivative(self, t):
        """Exact antiderivative, normalized to vanish at t = 0."""
        t = np.asarray(t, dtype=float)
        p = self.params
        k = self.kind
        if k == "const":
            out = p[0] * t
        elif k == "poly":
            coef = np.concatenate([[0.0], np.asarray(p) / np.arange(1, len(p) + 1)])
            out = np.polynomial.polynomial.polyval(t, coef)
        elif k == "trig":
            amp, om, ph, off = p
            if om == 0.0:
                out = (amp * math.sin(ph) + off) * t
            else:
                out = -amp / om * (np.cos(om * t + ph) - math.cos(ph)) + off * t
        elif k == "preset_ak":
            n = p[0]
            out = -n ** 2 * (t ** (n + 1.0) / (n + 1.0) + t)
        elif k == "preset_bk":
            n = p[0]
            out = -(np.cos(n * t) - 1.0) / n + p[1] * t
        else:
            out = -p[0] ** 2 * math.pi ** 2 * t
        return out if out.ndim else float(out)

    def integral(self, s, t):
        """Integral over [s, t]."""
        if self.is_constant:
            return self(0.0) * (np.asarray(t, dtype=float) - s)
        return self.antiderivative(t) - self.antiderivative(s)

    def quad_integral(self, s, t):
        """Adaptive-quadrature integral, kept as a reference for the exact path."""
        val, _ = integrate.quad(self, s, t, epsabs=0.0, epsrel=1e-13, limit=200)
        return val

    def sup_abs(self, T):
        """Supremum of |fn| over [0, T] (exact for constants, sampled otherwise)."""
        if self.is_constant:
            return abs(self(0.0))
        grid = np.linspace(0.0, T, 4097)
        return float(np.max(np.abs(self(grid))))

    def max_value(self, T):
        if self.is_constant:
            return self(0.0)
        return float(np.max(self(np.linspace(0.0, T, 4097))))

    def to_text(self):
        p = self.params
        if self.kind.startswith("preset"):
            rest = "".join(", " + fmt_value(x) for x in p[1:])
            return f"{self.kind}({int(p[0])}{rest})"
        return f"{self.kind}({', '.join(fmt_value(x) for x in p)})"


def const(c):
    return TimeFn("const", (c,))


def poly(*coeffs):
    return TimeFn("poly", tuple(coeffs))


def trig(amplitude, frequency, phase=0.0, offset=0.0):
    return TimeFn("trig", (amplitude, frequency, phase, offset))


def preset_ak(k):
    return TimeFn("preset_ak", (k,))


def preset_bk(k, c):
    return TimeFn("preset_bk", (k, c))


def preset_heat(k):
    return TimeFn("preset_heat", (k,))


ZERO = const(0.0)
