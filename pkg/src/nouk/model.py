"""Evolution families, direction spaces and their text form.

A model is the truncation of the state space to N coordinates with drift
A(t), diffusion B(t) and affine term f(t).  Three shapes are supported:
``diagonal`` (per-mode a_k, b_k), ``scalar_identity`` (A(t) = a(t) I with
per-mode b_k) and ``dense`` (A(t) = sum_i g_i(t) A_i, B(t) likewise).
"""
import math
from dataclasses import dataclass

import numpy as np

from .config import Call, Ident, Product, fmt_float, parse_document
from .errors import DegenerateDiffusion, ParseError, ValidationError
from .functions import (Factor, SourceTerm, TestFunction, abs_sin, constant, cosine,
                        separable_product, tanh_linear)
from .timefn import ZERO, TimeFn, const, poly, preset_ak, preset_bk, preset_heat, trig

__all__ = [
    "TimeFn", "const", "poly", "trig", "preset_ak", "preset_bk", "preset_heat",
    "EvolutionModel", "DirectionSpace", "TestFunction", "SourceTerm", "Factor",
    "constant", "cosine", "tanh_linear", "abs_sin", "separable_product",
    "load_model", "model_from_section", "dump_model", "direction_space", "preset_model",
    "eval_testfn", "analytic_derivative",
]

KINDS = ("diagonal", "scalar_identity", "dense")


def _matrix(rows, name):
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2:
        raise ValidationError(f"{name}: expected a matrix")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: non-finite entry")
    return tuple(tuple(float(v) for v in row) for row in arr)


@dataclass(frozen=True)
class EvolutionModel:
    """Truncated non-autonomous linear stochastic evolution.

    Parameters
    ----------
    T : float
        Horizon; all times live in [0, T].
    N : int
        Number of retained modes.
    kind : {'diagonal', 'scalar_identity', 'dense'}
    a : tuple of TimeFn
        Per-mode drift rates (``diagonal``) or the single rate a(t)
        (``scalar_identity``).  Unused for ``dense``.
    b : tuple of TimeFn
        Per-mode diffusion coefficients (``diagonal``/``scalar_identity``).
    f : tuple of TimeFn
        Affine drift per mode; empty means zero.
    A_terms, B_terms : tuple of (TimeFn, matrix)
        ``dense`` only: A(t) = sum g_i(t) A_i and B(t) = sum g_i(t) B_i.
    """

    T: float
    N: int
    kind: str
    a: tuple = ()
    b: tuple = ()
    f: tuple = ()
    A_terms: tuple = ()
    B_terms: tuple = ()

    def __post_init__(self):
        T = float(self.T)
        if not (math.isfinite(T) and T > 0):
            raise ValidationError("T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError("N must be a positive integer")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "N", int(self.N))
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        N = self.N
        if self.kind == "diagonal":
            if len(self.a) != N:
                raise ValidationError(f"diagonal model needs {N} drift functions, got {len(self.a)}")
            if len(self.b) != N:
                raise ValidationError(f"diagonal model needs {N} diffusion functions, got {len(self.b)}")
        elif self.kind == "scalar_identity":
            if len(self.a) != 1:
                raise ValidationError("scalar_identity model needs exactly one drift function")
            if len(self.b) != N:
                raise ValidationError(f"scalar_identity model needs {N} diffusion functions, got {len(self.b)}")
        else:
            if not self.A_terms or not self.B_terms:
                raise ValidationError("dense model needs A and B terms")
            terms_a = tuple((g, _matrix(m, "A")) for g, m in self.A_terms)
            terms_b = tuple((g, _matrix(m, "B")) for g, m in self.B_terms)
            for _, m in terms_a:
                if len(m) != N or len(m[0]) != N:
                    raise ValidationError(f"A matrices must be {N}x{N}")
            cols = {len(m[0]) for _, m in terms_b}
            for _, m in terms_b:
                if len(m) != N:
                    raise ValidationError(f"B matrices must have {N} rows")
            if len(cols) != 1:
                raise ValidationError("B matrices must share one column count")
            object.__setattr__(self, "A_terms", terms_a)
            object.__setattr__(self, "B_terms", terms_b)
        if self.f and len(self.f) != N:
            raise ValidationError(f"affine term needs {N} functions, got {len(self.f)}")
        if self.f and all(g.is_zero for g in self.f):
            object.__setattr__(self, "f", ())
        for g in tuple(self.a) + tuple(self.b) + tuple(self.f):
            if not isinstance(g, TimeFn):
                raise ValidationError("coefficients must be TimeFn values")

    # -- structure
    @property
    def is_diagonal(self):
        return self.kind in ("diagonal", "scalar_identity")

    @property
    def noise_dim(self):
        if self.kind == "dense":
            return len(self.B_terms[0][1][0])
        return self.N

    @property
    def has_affine(self):
        return bool(self.f)

    def drift_fns(self):
        return self.a * self.N if self.kind == "scalar_identity" else self.a

    # -- evaluation
    def a_diag(self, t):
        return np.array([g(t) for g in self.drift_fns()], dtype=float)

    def b_diag(self, t):
        return np.array([g(t) for g in self.b], dtype=float)

    def log_multipliers(self, s, t):
        """Per-mode integrals of a_k over [s, t] (diagonal kinds)."""
        if self.kind == "scalar_identity":
            return np.full(self.N, float(self.a[0].integral(s, t)))
        return np.array([g.integral(s, t) for g in self.a], dtype=float)

    def A_at(self, t):
        """Drift matrices at times ``t`` (scalar -> (N, N); array -> (len, N, N))."""
        t_arr = np.asarray(t, dtype=float)
        shape = t_arr.shape + (self.N, self.N)
        if self.kind == "dense":
            out = np.zeros(shape)
            for g, m in self.A_terms:
                out = out + np.multiply.outer(np.asarray(g(t_arr)), np.array(m))
            return out
        out = np.zeros(shape)
        idx = np.arange(self.N)
        vals = np.stack([np.broadcast_to(g(t_arr), t_arr.shape) for g in self.drift_fns()], axis=-1)
        out[..., idx, idx] = vals
        return out

    def B_at(self, t):
        t_arr = np.asarray(t, dtype=float)
        M = self.noise_dim
        if self.kind == "dense":
            out = np.zeros(t_arr.shape + (self.N, M))
            for g, m in self.B_terms:
                out = out + np.multiply.outer(np.asarray(g(t_arr)), np.array(m))
            return out
        out = np.zeros(t_arr.shape + (self.N, M))
        idx = np.arange(self.N)
        vals = np.stack([np.broadcast_to(g(t_arr), t_arr.shape) for g in self.b], axis=-1)
        out[..., idx, idx] = vals
        return out

    def f_at(self, t):
        t_arr = np.asarray(t, dtype=float)
        if not self.f:
            return np.zeros(t_arr.shape + (self.N,))
        return np.stack([np.broadcast_to(g(t_arr), t_arr.shape) for g in self.f], axis=-1)

    # -- diagnostics
    def b_sup(self):
        """Per-mode (or per-term) sup of |b| over [0, T]."""
        if self.kind == "dense":
            grid = np.linspace(0.0, self.T, 1025)
            return np.array([float(np.max(np.linalg.norm(self.B_at(grid), ord=2, axis=(1, 2))))])
        return np.array([g.sup_abs(self.T) for g in self.b])

    def summability_diagnostic(self):
        """Sum of sup|b_k|^2 / |max_t a_k| over modes with a nonzero max (diagonal kinds)."""
        if not self.is_diagonal:
            return None
        lam = np.array([g.max_value(self.T) for g in self.drift_fns()])
        sup_b = self.b_sup()
        mask = lam != 0.0
        if not np.any(mask):
            return None
        return float(np.sum(sup_b[mask] ** 2 / np.abs(lam[mask])))


@dataclass(frozen=True)
class DirectionSpace:
    """Weighted l2 norm ``||h||_E = sqrt(sum (w_k h_k)^2)`` on directions."""

    weights: tuple
    label: str = "custom"

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not w or not all(math.isfinite(v) and v > 0 for v in w):
            raise ValidationError("direction-space weights must be positive and finite")
        object.__setattr__(self, "weights", w)

    @property
    def w(self):
        return np.asarray(self.weights)

    @property
    def N(self):
        return len(self.weights)

    @property
    def embedding_constant(self):
        """Norm of the embedding E -> X."""
        return 1.0 / min(self.weights)

    def norm(self, h):
        h = np.asarray(h, dtype=float)
        return np.sqrt(np.sum((self.w * h) ** 2, axis=-1))

    def dual_norm(self, ell):
        """Norm of the functional h -> <ell, h> on E."""
        ell = np.asarray(ell, dtype=float)
        return np.sqrt(np.sum((ell / self.w) ** 2, axis=-1))

    def unit(self, h):
        h = np.asarray(h, dtype=float)
        n = self.norm(h)
        return h / n if np.ndim(n) == 0 else h / n[..., None]

    def steepest(self, ell):
        """Unit direction maximizing <ell, h> over the E unit sphere."""
        return self.unit(np.asarray(ell, dtype=float) / self.w ** 2)


def direction_space(preset, model, **params):
    """Build a direction space from a preset.

    Parameters
    ----------
    preset : {'ambient', 'cm_at', 'sobolev', 'custom'}
    model : EvolutionModel
    **params
        ``t0`` for ``cm_at``, ``gamma`` for ``sobolev``, ``weights`` for ``custom``.

    Raises
    ------
    DegenerateDiffusion
        If ``cm_at`` meets a mode with b_k(t0) = 0.
    """
    N = model.N
    if preset == "ambient":
        _no_extra(params, ())
        return DirectionSpace((1.0,) * N, "ambient")
    if preset == "cm_at":
        _no_extra(params, ("t0",))
        t0 = float(params.get("t0", 0.0))
        if not 0.0 <= t0 <= model.T:
            raise ValidationError("cm_at: t0 must lie in [0, T]")
        if model.kind == "dense":
            B = model.B_at(t0)
            if B.shape[0] != B.shape[1] or np.any(B - np.diag(np.diag(B))):
                raise ValidationError("cm_at needs a diagonal diffusion")
            b = np.diag(B)
        else:
            b = model.b_diag(t0)
        scale = max(1.0, float(np.max(np.abs(b))))
        for k, v in enumerate(b, start=1):
            if abs(v) <= 1e-14 * scale:
                raise DegenerateDiffusion(k)
        return DirectionSpace(tuple(1.0 / abs(v) for v in b), f"cm_at({fmt_float(t0)})")
    if preset == "sobolev":
        _no_extra(params, ("gamma",))
        gamma = float(params.get("gamma", 0.0))
        k = np.arange(1, N + 1)
        return DirectionSpace(tuple((k * math.pi) ** gamma), f"sobolev({fmt_float(gamma)})")
    if preset == "custom":
        _no_extra(params, ("weights",))
        w = tuple(params["weights"])
        if len(w) != N:
            raise ValidationError(f"custom weights need {N} entries")
        return DirectionSpace(w, "custom")
    raise ValidationError(f"unknown direction-space preset {preset!r}")


def _no_extra(params, allowed):
    extra = set(params) - set(allowed)
    if extra:
        raise ValidationError(f"unexpected parameter(s): {', '.join(sorted(extra))}")


def eval_testfn(phi, x):
    return phi(x)


def analytic_derivative(phi, x, dirs):
    return phi.derivative(x, dirs)


# ---------------------------------------------------------------- presets

def preset_model(name, N, T=1.0, **params):
    """Named model families.

    ``flat``: a = 0, b = 1.  ``example1``: a_k = -k^2 (t^k + 1),
    b_k = sin(kt) + c (default c = 2).  ``example2``: A(t) = a(t) I with
    a given by ``a`` (default sin t), b = 1.  ``heat``: a_k = -k^2 pi^2,
    b_k = (k pi)^(-gamma) (default gamma = 0).
    """
    N = int(N)
    if name == "flat":
        _no_extra(params, ())
        return EvolutionModel(T, N, "diagonal", (ZERO,) * N, (const(1.0),) * N)
    if name == "example1":
        _no_extra(params, ("c",))
        c = float(params.get("c", 2.0))
        if c <= 1.0:
            raise ValidationError("example1 needs c > 1")
        ks = range(1, N + 1)
        return EvolutionModel(T, N, "diagonal", tuple(preset_ak(k) for k in ks),
                              tuple(preset_bk(k, c) for k in ks))
    if name == "example2":
        _no_extra(params, ("a",))
        a = params.get("a", trig(1.0, 1.0, 0.0, 0.0))
        return EvolutionModel(T, N, "scalar_identity", (a,), (const(1.0),) * N)
    if name == "heat":
        _no_extra(params, ("gamma",))
        gamma = float(params.get("gamma", 0.0))
        ks = range(1, N + 1)
        return EvolutionModel(T, N, "diagonal", tuple(preset_heat(k) for k in ks),
                              tuple(const((k * math.pi) ** (-gamma)) for k in ks))
    raise ValidationError(f"unknown model preset {name!r}")


# ---------------------------------------------------------------- text form

def _num(v, name, line):
    if isinstance(v, float):
        return v
    raise ParseError(line, f"{name}: expected a number")


def _timefn_explicit(node, line):
    """A fully specified TimeFn: ``const(c)``, ``preset_ak(k)``, ..."""
    if isinstance(node, Ident) and node == "zero":
        return ZERO
    if not isinstance(node, Call):
        raise ParseError(line, f"expected a time function, found {node!r}")
    if node.kwargs:
        raise ParseError(line, f"{node.name}: keyword arguments are only allowed in templates")
    args = [_num(a, node.name, line) for a in node.args]
    try:
        return TimeFn(node.name, tuple(args))
    except ValidationError as exc:
        raise ParseError(line, str(exc)) from None


def _timefn_template(node, k, line):
    """Per-mode expansion of a template such as ``preset_bk(c=2)``."""
    name = node.name if isinstance(node, Call) else str(node)
    args = list(node.args) if isinstance(node, Call) else []
    kw = dict(node.kwargs) if isinstance(node, Call) else {}
    if name == "zero" and not args and not kw:
        return ZERO
    if name == "preset_ak" and not args and not kw:
        return preset_ak(k)
    if name == "preset_heat" and not args and not kw:
        return preset_heat(k)
    if name == "preset_bk":
        if len(args) + len(kw) != 1 or (kw and "c" not in kw):
            raise ParseError(line, "preset_bk template takes one parameter c")
        c = _num(kw["c"] if kw else args[0], name, line)
        return preset_bk(k, c)
    if name == "heat_noise":
        if len(args) + len(kw) != 1 or (kw and "gamma" not in kw):
            raise ParseError(line, "heat_noise template takes one parameter gamma")
        g = _num(kw["gamma"] if kw else args[0], name, line)
        return const((k * math.pi) ** (-g))
    if name in ("const", "poly", "trig") and isinstance(node, Call):
        return _timefn_explicit(node, line)
    raise ParseError(line, f"unknown time-function template {name!r}")


def _timefn_list(node, N, line, name):
    if isinstance(node, tuple):
        if len(node) != N:
            raise ValidationError(f"{name}: expected {N} entries, got {len(node)}")
        return tuple(_timefn_explicit(v, line) for v in node)
    if isinstance(node, (Call, Ident)):
        return tuple(_timefn_template(node, k, line) for k in range(1, N + 1))
    raise ParseError(line, f"{name}: expected a time-function list or template")


_MODEL_KEYS = {"preset", "kind", "N", "T", "a", "b", "f", "c", "gamma"}


def model_from_section(sec):
    """Build a model from a parsed ``[model]`` section ``{key: (value, line)}``."""

    def get(key, default=None):
        return sec[key][0] if key in sec else default

    def line(key):
        return sec[key][1] if key in sec else 0

    for key, (_, ln) in sec.items():
        if key not in _MODEL_KEYS and not (key[:1] in "AB" and key[1:].isdigit()):
            raise ParseError(ln, f"unknown key {key!r} in [model]")
    if "N" not in sec:
        raise ValidationError("model: N is required")
    N = _num(get("N"), "N", line("N"))
    if N != int(N) or N < 1:
        raise ValidationError("N must be a positive integer")
    N = int(N)
    T = _num(get("T", 1.0), "T", line("T"))
    f = _timefn_list(get("f"), N, line("f"), "f") if "f" in sec else ()

    if "preset" in sec:
        name = str(get("preset"))
        params = {}
        for key in ("c", "gamma"):
            if key in sec:
                params[key] = _num(get(key), key, line(key))
        if "a" in sec:
            if name != "example2":
                raise ParseError(line("a"), f"preset {name} fixes the drift")
            params["a"] = _timefn_explicit(get("a"), line("a"))
        for key in ("kind", "b") + tuple(k for k in sec if k[:1] in "AB" and k[1:].isdigit()):
            if key in sec:
                raise ParseError(line(key), f"key {key!r} cannot be combined with a preset")
        m = preset_model(name, N, T, **params)
        return EvolutionModel(m.T, m.N, m.kind, m.a, m.b, f)

    for key in ("c", "gamma"):
        if key in sec:
            raise ParseError(line(key), f"key {key!r} is only valid with a preset")
    kind = str(get("kind", "diagonal"))
    if kind == "diagonal":
        if "a" not in sec or "b" not in sec:
            raise ValidationError("diagonal model needs a and b")
        a = _timefn_list(get("a"), N, line("a"), "a")
        b = _timefn_list(get("b"), N, line("b"), "b")
        if not b:
            raise ValidationError("diagonal model needs a non-empty b list")
        return EvolutionModel(T, N, kind, a, b, f)
    if kind == "scalar_identity":
        if "a" not in sec or "b" not in sec:
            raise ValidationError("scalar_identity model needs a and b")
        a = (_timefn_explicit(get("a"), line("a")),)
        b = _timefn_list(get("b"), N, line("b"), "b")
        return EvolutionModel(T, N, kind, a, b, f)
    if kind == "dense":
        terms = {"A": [], "B": []}
        for key in sorted((k for k in sec if k[:1] in "AB" and k[1:].isdigit()), key=lambda k: (k[0], int(k[1:]))):
            val, ln = sec[key]
            if not isinstance(val, Product):
                raise ParseError(ln, f"{key}: expected 'timefn * [[matrix]]'")
            terms[key[0]].append((_timefn_explicit(val.coef, ln), val.matrix))
        if "a" in sec or "b" in sec:
            raise ParseError(line("a") or line("b"), "dense models use A1, A2, ... and B1, B2, ...")
        return EvolutionModel(T, N, kind, (), (), f, tuple(terms["A"]), tuple(terms["B"]))
    raise ValidationError(f"unknown model kind {kind!r}")


def load_model(config_text):
    """Parse a configuration document and return its model.

    The model is read from the ``[model]`` section, or from keys placed
    before any section header when there is no ``[model]`` section.

    Raises
    ------
    ParseError
        Malformed text, with the offending line number.
    ValidationError
        Structurally valid text describing an invalid model.
    """
    doc = parse_document(config_text)
    sec = doc.section("model") if doc.has("model") else doc.section("")
    return model_from_section(sec)


def _mat_text(m):
    return "[" + ", ".join("[" + ", ".join(fmt_float(v) for v in row) + "]" for row in m) + "]"


def dump_model(model):
    """Explicit text form of a model; ``load_model(dump_model(m)) == m``."""
    lines = ["[model]", f"kind = {model.kind}", f"N = {model.N}", f"T = {fmt_float(model.T)}"]
    if model.kind == "diagonal":
        lines.append("a = [" + ", ".join(g.to_text() for g in model.a) + "]")
    elif model.kind == "scalar_identity":
        lines.append(f"a = {model.a[0].to_text()}")
    if model.kind != "dense":
        lines.append("b = [" + ", ".join(g.to_text() for g in model.b) + "]")
    for i, (g, m) in enumerate(model.A_terms, start=1):
        lines.append(f"A{i} = {g.to_text()} * {_mat_text(m)}")
    for i, (g, m) in enumerate(model.B_terms, start=1):
        lines.append(f"B{i} = {g.to_text()} * {_mat_text(m)}")
    if model.f:
        lines.append("f = [" + ", ".join(g.to_text() for g in model.f) + "]")
    return "\n".join(lines) + "\n"
