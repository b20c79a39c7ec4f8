"""Command-line front end: ``nouk <subcommand> --config PATH [options]``.

A configuration has the sections ``[model]``, ``[space]``, ``[phi]``,
``[psi]`` and ``[run]``; unknown keys are errors.  Reports are written to
``<out>/<subcommand>.<format>`` with the resolved configuration, seed and
library versions embedded, and the resolved configuration is also written
to ``<out>/<subcommand>.resolved.cfg``.
"""
import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np
import scipy

from . import __version__
from . import _kernels
from . import functions as fn
from . import mild
from . import propagator as prop
from . import regularity as reg
from . import semigroup as sg
from .config import Call, fmt_float, fmt_value, parse_document
from .errors import MethodUnavailable, NoukError, ParseError, UnsupportedOrder, ValidationError
from .gaussian import GaussianState, cm_density
from .model import _timefn_explicit, direction_space, dump_model, model_from_section
from .timefn import const

__all__ = ["main", "RunConfig", "load_config", "resolved_text", "SUBCOMMANDS"]

SUBCOMMANDS = ("evolve", "apply", "deriv", "mild", "fit-theta", "holder", "zygmund", "schauder", "check")

# run-section keys and defaults, in echo order; None means "derived from the model"
RUN_DEFAULTS = {
    "seed": 0,
    "s": 0.0,
    "t": None,
    "x": None,
    "method": "auto",
    "n_samples": 65536,
    "nodes": 64,
    "dirs": None,
    "k": "auto",
    "theta": 0.5,
    "psi_regularity": "none",
    "panels": 20,
    "ratio": 2.0,
    "quad_nodes": 8,
    "tau_min": 1e-4,
    "tau_max": 1e-1,
    "points": 8,
    "budget": 64,
    "box": (-3.0, 3.0),
    "h_min": 1e-3,
    "h_max": 1e-1,
    "holder_alpha": 1.0,
    "alpha": 0.0,
    "n_max": "auto",
    "s_values": None,
    "part": "u",
    "target": "phi",
    "order": 0,
    "n_paths": 16384,
    "n_steps": 256,
    "format": "csv",
}
# accepted in [run] but not echoed: they do not change results
RUN_SCHEDULING = ("threads", "out")

DEFAULT_CONFIG = """\
[model]
preset = example1
N = 4
T = 1.0

[space]
preset = cm_at
t0 = 0.0

[phi]
kind = cosine
l = [1.0, 0.5, -0.25, 0.125]
c = 0.3

[psi]
rho = const(1.0)
kind = cosine
l = [1.0, 0.0, 0.0, 0.0]
c = 0.0

[run]
s = 0.25
t = 1.0
"""


@dataclass
class RunConfig:
    model: object
    space_preset: str
    space_params: dict
    E: object
    phi: object
    psi: object
    run: dict
    threads: int = 1


# ---------------------------------------------------------------- parsing

def _num(v, key, line):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(line, f"{key}: expected a number")
    return float(v)


def _int(v, key, line, lo=None):
    x = _num(v, key, line)
    if x != int(x) or (lo is not None and x < lo):
        raise ValidationError(f"{key} must be an integer" + (f" >= {lo}" if lo is not None else ""))
    return int(x)


def _vec(v, key, line, n=None):
    if not isinstance(v, tuple) or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v):
        raise ParseError(line, f"{key}: expected a list of numbers")
    if n is not None and len(v) != n:
        raise ValidationError(f"{key} needs {n} entries")
    return tuple(float(a) for a in v)


def _ident(v, key, line, choices):
    if not isinstance(v, str) or str(v) not in choices:
        raise ValidationError(f"{key} must be one of {', '.join(choices)}")
    return str(v)


def _strict(sec, allowed, name):
    for key, (_, ln) in sec.items():
        if key not in allowed:
            raise ParseError(ln, f"unknown key {key!r} in [{name}]")


def _factor(node, line):
    if not isinstance(node, Call):
        raise ParseError(line, "factors: expected calls like cos(l, c), tanh(l), abs_sin(l), const(c)")
    args = [_num(a, "factor argument", line) for a in node.args]
    if node.kwargs:
        raise ParseError(line, "factors take positional arguments only")
    if node.name == "const" and len(args) == 1:
        return fn.Factor("const", 0.0, args[0])
    if node.name == "cos" and len(args) in (1, 2):
        return fn.Factor("cos", args[0], args[1] if len(args) == 2 else 0.0)
    if node.name in ("tanh", "abs_sin") and len(args) == 1:
        return fn.Factor(node.name, args[0])
    raise ParseError(line, f"unknown factor {node.name!r}")


def testfn_from_section(sec, name, N):
    """Build a TestFunction from keys kind, l, c, factors."""
    def line(key):
        return sec[key][1] if key in sec else 0

    kind = _ident(sec["kind"][0], "kind", line("kind"),
                  ("constant", "cosine", "tanh_linear", "abs_sin", "separable_product")) if "kind" in sec else None
    if kind is None:
        raise ValidationError(f"[{name}] needs kind")
    if kind == "constant":
        phi = fn.constant(_num(sec["c"][0], "c", line("c")) if "c" in sec else 1.0)
        bad = [k for k in ("l", "factors") if k in sec]
    elif kind == "separable_product":
        if "factors" not in sec or not isinstance(sec["factors"][0], tuple):
            raise ValidationError(f"[{name}] separable_product needs factors = [...]")
        phi = fn.separable_product([_factor(f, line("factors")) for f in sec["factors"][0]])
        bad = [k for k in ("l", "c") if k in sec]
    else:
        if "l" not in sec:
            raise ValidationError(f"[{name}] {kind} needs l")
        ell = _vec(sec["l"][0], "l", line("l"), N)
        if kind == "cosine":
            phi = fn.cosine(ell, _num(sec["c"][0], "c", line("c")) if "c" in sec else 0.0)
            bad = ["factors"] if "factors" in sec else []
        else:
            phi = fn.tanh_linear(ell) if kind == "tanh_linear" else fn.abs_sin(ell)
            bad = [k for k in ("c", "factors") if k in sec]
    if bad:
        raise ParseError(line(bad[0]), f"key {bad[0]!r} does not apply to {kind}")
    phi.check_dim(N)
    return phi


def _space(sec, model):
    _strict(sec, ("preset", "t0", "gamma", "weights"), "space")
    preset = str(sec["preset"][0]) if "preset" in sec else "ambient"
    params = {}
    for key in ("t0", "gamma"):
        if key in sec:
            params[key] = _num(sec[key][0], key, sec[key][1])
    if "weights" in sec:
        params["weights"] = _vec(sec["weights"][0], "weights", sec["weights"][1], model.N)
    return preset, params, direction_space(preset, model, **params)


def _run(sec, model):
    _strict(sec, tuple(RUN_DEFAULTS) + RUN_SCHEDULING, "run")
    N = model.N
    r = dict(RUN_DEFAULTS)
    r["t"] = model.T
    r["x"] = (0.0,) * N
    r["dirs"] = (tuple(1.0 if j == 0 else 0.0 for j in range(N)),)
    r["s_values"] = (r["s"],)
    get = {k: v for k, v in sec.items()}
    for key, (v, ln) in get.items():
        if key in RUN_SCHEDULING:
            continue
        if key in ("seed", "n_samples", "nodes", "panels", "quad_nodes", "points", "budget", "order", "n_paths",
                   "n_steps"):
            r[key] = _int(v, key, ln, 0 if key in ("seed", "order") else 1)
        elif key in ("s", "t", "theta", "ratio", "tau_min", "tau_max", "h_min", "h_max", "holder_alpha", "alpha"):
            r[key] = _num(v, key, ln)
        elif key == "x":
            r[key] = _vec(v, key, ln, N)
        elif key == "box":
            r[key] = _vec(v, key, ln, 2)
        elif key == "s_values":
            r[key] = _vec(v, key, ln)
        elif key == "dirs":
            if not isinstance(v, tuple):
                raise ParseError(ln, "dirs: expected a list of vectors")
            r[key] = tuple(_vec(h, "dirs", ln, N) for h in v)
        elif key == "method":
            r[key] = _ident(v, key, ln, ("auto", "mc", "gauss_hermite", "closed_form"))
        elif key == "k":
            r[key] = "auto" if str(v) == "auto" else _int(v, key, ln, 0)
        elif key == "n_max":
            r[key] = "auto" if str(v) == "auto" else _int(v, key, ln, 0)
        elif key == "psi_regularity":
            r[key] = "none" if str(v) == "none" else _int(v, key, ln, 0)
        elif key == "part":
            r[key] = _ident(v, key, ln, ("u", "u0", "u1"))
        elif key == "target":
            r[key] = _ident(v, key, ln, ("phi", "u", "u0", "u1"))
        elif key == "format":
            r[key] = _ident(v, key, ln, ("csv", "json"))
    if "s_values" not in get:
        r["s_values"] = (r["s"],)
    if r["seed"] >= 2 ** 64:
        raise ValidationError("seed must fit in 64 bits")
    if not 0.0 < r["tau_min"] < r["tau_max"]:
        raise ValidationError("need 0 < tau_min < tau_max")
    if not 0.0 < r["h_min"] < r["h_max"]:
        raise ValidationError("need 0 < h_min < h_max")
    if not r["box"][0] < r["box"][1]:
        raise ValidationError("box must be [lo, hi] with lo < hi")
    threads = _int(sec["threads"][0], "threads", sec["threads"][1], 1) if "threads" in sec else None
    out = str(sec["out"][0]) if "out" in sec else None
    return r, threads, out


def load_config(text):
    """Parse a full run configuration.

    Returns
    -------
    (RunConfig, threads or None, out or None)
    """
    doc = parse_document(text)
    for name in doc.order:
        if name not in ("model", "space", "phi", "psi", "run"):
            sec = doc.section(name)
            ln = min((v[1] for v in sec.values()), default=0)
            raise ParseError(ln, f"unknown section [{name}]" if name else "keys outside any section")
    if not doc.has("model"):
        raise ValidationError("configuration needs a [model] section")
    model = model_from_section(doc.section("model"))
    preset, params, E = _space(doc.section("space"), model)
    phi = None
    if doc.has("phi"):
        sec = doc.section("phi")
        _strict(sec, ("kind", "l", "c", "factors"), "phi")
        phi = testfn_from_section(sec, "phi", model.N)
    psi = None
    if doc.has("psi"):
        sec = doc.section("psi")
        _strict(sec, ("rho", "kind", "l", "c", "factors"), "psi")
        rho = _timefn_explicit(sec["rho"][0], sec["rho"][1]) if "rho" in sec else const(1.0)
        psi = fn.SourceTerm(rho, testfn_from_section(sec, "psi", model.N))
    run, threads, out = _run(doc.section("run"), model)
    return RunConfig(model, preset, params, E, phi, psi, run), threads, out


def _run_value(v):
    if isinstance(v, str):
        return str(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "[" + ", ".join(_run_value(h) for h in v) + "]"
        return "[" + ", ".join(fmt_float(a) for a in v) + "]"
    if isinstance(v, int):
        return str(v)
    return fmt_value(float(v))


def resolved_text(cfg):
    """Configuration text with every default made explicit; parses back to the same run."""
    lines = [dump_model(cfg.model).rstrip("\n"), "", "[space]", f"preset = {cfg.space_preset}"]
    for key in sorted(cfg.space_params):
        lines.append(f"{key} = {_run_value(cfg.space_params[key])}")
    if cfg.phi is not None:
        lines += ["", "[phi]"] + cfg.phi.to_lines()
    if cfg.psi is not None:
        lines += ["", "[psi]", f"rho = {cfg.psi.rho.to_text()}"] + cfg.psi.phi.to_lines()
    lines += ["", "[run]"]
    for key in RUN_DEFAULTS:
        lines.append(f"{key} = {_run_value(cfg.run[key])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- reports

def _versions():
    import numba
    return {"backend": _kernels.BACKEND, "nouk": __version__, "numba": numba.__version__,
            "numpy": np.__version__, "python": ".".join(str(v) for v in sys.version_info[:3]),
            "scipy": scipy.__version__}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else fmt_float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(a) for a in v]
    if isinstance(v, dict):
        return {k: _json_value(a) for k, a in v.items()}
    return v


def write_report(out_dir, command, fmt, cfg, columns, rows, summary):
    """Write the report and the resolved configuration; returns the report path."""
    os.makedirs(out_dir, exist_ok=True)
    text = resolved_text(cfg)
    with open(os.path.join(out_dir, f"{command}.resolved.cfg"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    path = os.path.join(out_dir, f"{command}.{fmt}")
    vers = _versions()
    if fmt == "json":
        doc = {"command": command, "config": text, "seed": cfg.run["seed"], "versions": vers,
               "columns": list(columns), "rows": [{c: _json_value(r.get(c)) for c in columns} for r in rows],
               "summary": _json_value(summary)}
        body = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    else:
        out = [f"# nouk {command}", f"# seed = {cfg.run['seed']}",
               "# versions: " + " ".join(f"{k}={v}" for k, v in sorted(vers.items()))]
        out += ["# config: " + ln if ln else "# config:" for ln in text.rstrip("\n").split("\n")]
        out += [f"# summary: {k} = {_cell(v)}" for k, v in sorted(summary.items())]
        out.append(",".join(columns))
        out += [",".join(_cell(r.get(c)) for c in columns) for r in rows]
        body = "\n".join(out) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(body)
    return path


# ---------------------------------------------------------------- subcommands

def _need(obj, what):
    if obj is None:
        raise ValidationError(f"this subcommand needs a [{what}] section")
    return obj


def _quad(r):
    return mild.QuadSpec(panels=r["panels"], ratio=r["ratio"], nodes=r["quad_nodes"])


def _s_grid(r):
    return r["t"] - np.geomspace(r["tau_min"], r["tau_max"], r["points"])


def cmd_evolve(cfg):
    m, r = cfg.model, cfg.run
    s, t = r["s"], r["t"]
    U = prop.transition(m, s, t)
    G = prop.covariance(m, s, t)
    mx = prop.mean(m, s, t, np.asarray(r["x"]))
    rows = []
    if U.rep == "dense":
        M = U.matrix()
        rows += [{"quantity": "U", "i": i + 1, "j": j + 1, "value": M[i, j]} for i in range(m.N) for j in range(m.N)]
    else:
        rows += [{"quantity": "U", "i": i + 1, "j": i + 1, "value": v} for i, v in enumerate(U.diag)]
    rows += [{"quantity": "q", "i": i + 1, "value": v} for i, v in enumerate(G.eigvals)]
    rows += [{"quantity": "mean", "i": i + 1, "value": v} for i, v in enumerate(mx)]
    lam = prop.lambda_operator(m, cfg.E, s, t).norm if s < t else math.inf
    summary = {"trace": G.trace, "rank": G.rank, "lambda_norm": lam, "space": cfg.E.label}
    rows.append({"quantity": "trace", "value": G.trace})
    rows.append({"quantity": "lambda_norm", "value": lam})
    return ("quantity", "i", "j", "value"), rows, summary, 0


def _oracle(cfg, G, phi):
    try:
        return sg.closed_form_value(G, phi)
    except (MethodUnavailable, UnsupportedOrder):
        return None


def cmd_apply(cfg):
    m, r = cfg.model, cfg.run
    phi = _need(cfg.phi, "phi")
    x = np.asarray(r["x"])
    rep = sg.apply(m, phi, r["s"], r["t"], x, method=r["method"], n_samples=r["n_samples"], seed=r["seed"],
                   threads=cfg.threads, nodes=r["nodes"])
    G = prop.state(m, r["s"], r["t"], x)
    oracle = _oracle(cfg, G, phi) if sg._has_closed_form(phi, G) else None
    row = {"method": rep.method, "value": rep.value, "uncertainty": rep.uncertainty, "n_samples": rep.n_samples,
           "oracle": oracle, "oracle_diff": None if oracle is None else rep.value - oracle}
    return tuple(row), [row], {"value": rep.value, "uncertainty": rep.uncertainty}, 0


def cmd_deriv(cfg):
    m, r = cfg.model, cfg.run
    phi = _need(cfg.phi, "phi")
    x = np.asarray(r["x"])
    dirs = [np.asarray(h) for h in r["dirs"]]
    n = len(dirs)
    kw = dict(n_samples=r["n_samples"], seed=r["seed"], threads=cfg.threads, nodes=r["nodes"])
    rows = []
    ks = [min(n, phi.order)] if r["k"] == "auto" else [r["k"]]
    if r["s"] < r["t"]:
        ks = sorted(set(ks + [0]))
    if phi.order >= n:
        ks = sorted(set(ks + [n]))
    for k in ks:
        try:
            rep = sg.mixed_derivative(m, cfg.E, phi, r["s"], r["t"], x, dirs, k, method=r["method"], **kw)
        except MethodUnavailable:
            rep = sg.mixed_derivative(m, cfg.E, phi, r["s"], r["t"], x, dirs, k, method="mc", **kw)
        label = "transported" if k == n else ("smoothing" if k == 0 else "mixed")
        rows.append({"representation": label, "k": k, "n": n - k, "method": rep.method, "value": rep.value,
                     "uncertainty": rep.uncertainty})
    G = prop.state(m, r["s"], r["t"], x)
    if n <= 4 and (sg._has_closed_form(phi, G) or (sg._has_gh(phi, G) and phi.kind != "abs_sin")):
        meth = "closed_form" if sg._has_closed_form(phi, G) else "gauss_hermite"
        fd = sg.fd_derivative(lambda y: sg.apply(m, phi, r["s"], r["t"], y, method=meth, nodes=r["nodes"]).value,
                              x, dirs)
        rows.append({"representation": "fd", "k": 0, "n": n, "method": "fd", "value": fd.value,
                     "uncertainty": fd.error_estimate})
    return ("representation", "k", "n", "method", "value", "uncertainty"), rows, {"order": n}, 0


def cmd_mild(cfg):
    m, r = cfg.model, cfg.run
    phi = cfg.phi if cfg.phi is not None else fn.constant(0.0)
    psi = cfg.psi if cfg.psi is not None else fn.SourceTerm(const(0.0), fn.constant(0.0))
    x = np.asarray(r["x"])
    kw = dict(n_samples=r["n_samples"], seed=r["seed"], threads=cfg.threads)
    q = _quad(r)
    a = mild.u0(m, phi, r["s"], r["t"], x, method=r["method"], **kw)
    b = mild.u1(m, psi, r["s"], r["t"], x, q, r["method"], **kw)
    rows = [{"quantity": "u0", "order": 0, "method": a.method, "value": a.value, "uncertainty": a.uncertainty},
            {"quantity": "u1", "order": 0, "method": b.method, "value": b.value, "uncertainty": b.uncertainty},
            {"quantity": "u", "order": 0, "method": b.method, "value": a.value + b.value,
             "uncertainty": a.uncertainty + b.uncertainty}]
    dirs = [np.asarray(h) for h in r["dirs"]]
    if dirs and r["s"] < r["t"]:
        reg_ = None if r["psi_regularity"] == "none" else r["psi_regularity"]
        d = mild.mild_derivative(m, cfg.E, phi, psi, r["s"], r["t"], x, dirs, r["theta"], q, r["method"],
                                 psi_regularity=reg_, **kw)
        rows.append({"quantity": "D^n u", "order": len(dirs), "method": d.method, "value": d.value,
                     "uncertainty": d.uncertainty})
    return ("quantity", "order", "method", "value", "uncertainty"), rows, {"u": a.value + b.value}, 0


def cmd_fit_theta(cfg):
    r = cfg.run
    grid = _s_grid(r)
    fit = reg.theta_fit(cfg.model, cfg.E, r["t"], grid)
    rows = [{"s": s, "tau": r["t"] - s, "lambda_norm": v} for s, v in zip(grid, fit.extra["norms"])]
    summary = {"slope": fit.slope, "theta": -fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared}
    return ("s", "tau", "lambda_norm"), rows, summary, 0


def _target(cfg):
    r = cfg.run
    e = cfg.E.unit(np.asarray(r["dirs"][0]))
    if r["target"] == "phi":
        phi = _need(cfg.phi, "phi")
        n = r["order"]
        if n == 0:
            return phi, e
        return (lambda x: phi.derivative(x, [e] * n)), e
    return reg.solution_evaluator(cfg.model, cfg.E, r["theta"], cfg.phi, cfg.psi, r["s"], r["t"], e, r["order"],
                                  r["target"], _quad(r)), e


def cmd_holder(cfg):
    r = cfg.run
    f, e = _target(cfg)
    est = reg.holder_seminorm(f, cfg.E, r["holder_alpha"], tuple(r["box"]), r["budget"], r["seed"],
                              (r["h_min"], r["h_max"]), [e])
    rows = [{"component": i + 1, "x": est.x[i], "h": est.h[i]} for i in range(cfg.model.N)]
    summary = {"seminorm": est.value, "alpha": r["holder_alpha"], "budget": est.budget}
    return ("component", "x", "h"), rows, summary, 0


def cmd_zygmund(cfg):
    r = cfg.run
    f, e = _target(cfg)
    h = np.geomspace(r["h_min"], r["h_max"], r["points"])
    prof = reg.zygmund_profile(f, cfg.E, h, tuple(r["box"]), r["budget"], r["seed"], [e])
    rows = [{"h": hv, "quotient": v} for hv, v in zip(prof.h, prof.values)]
    summary = {"ratio": prof.ratio, "verdict": prof.verdict, "bounded_threshold": reg.ZYGMUND_BOUNDED,
               "unbounded_threshold": reg.ZYGMUND_UNBOUNDED}
    return ("h", "quotient"), rows, summary, 0


def cmd_schauder(cfg):
    r = cfg.run
    n_max = None if r["n_max"] == "auto" else r["n_max"]
    rows = reg.schauder_report(cfg.model, cfg.E, r["theta"], cfg.phi, cfg.psi, r["t"], r["alpha"], r["s_values"],
                               r["budget"], tuple(r["box"]), r["seed"], n_max,
                               np.geomspace(r["h_min"], r["h_max"], r["points"]), _quad(r),
                               cfg.E.unit(np.asarray(r["dirs"][0])), r["part"])
    cols = ("s", "n", "sup", "gamma", "expected_exponent", "fitted_exponent", "r_squared", "zygmund_ratio", "verdict")
    return cols, rows, {"theta": r["theta"], "alpha": r["alpha"]}, 0


def _dense_reference(T):
    text = ("[model]\nkind = dense\nN = 3\nT = {T}\n"
            "A1 = const(1.0) * [[-1.0, 0.3, 0.0], [0.0, -2.0, 0.5], [0.2, 0.0, -1.5]]\n"
            "A2 = trig(0.5, 2.0, 0.0, 0.0) * [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]\n"
            "B1 = const(1.0) * [[1.0, 0.0, 0.0], [0.2, 0.8, 0.0], [0.0, 0.1, 1.2]]\n"
            "f = [const(0.5), trig(1.0, 1.0, 0.0, 0.0), const(0.0)]\n").format(T=fmt_float(T))
    return model_from_section(parse_document(text).section("model"))


def _pairings_defect(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        N = 4
        A = rng.normal(size=(N, N))
        G = GaussianState(np.zeros(N), cov=A @ A.T + 0.1 * np.eye(N))
        V = rng.normal(size=(4, N))
        P = rng.normal(size=(4, 4))
        ctx = sg.context_from_parts(G, V, P @ P.T)
        y = rng.normal(size=(8, N))
        worst = max(worst, float(np.max(np.abs(sg.in_eval(ctx, y) - sg.pairing_expansion(ctx, y)))))
    return worst


def _cm_defect(seed):
    from scipy.stats import multivariate_normal
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        A = rng.normal(size=(4, 4))
        Q = A @ A.T + 0.2 * np.eye(4)
        G = GaussianState(np.zeros(4), cov=Q)
        h, y = rng.normal(size=4), rng.normal(size=4)
        ref = multivariate_normal(h, Q).pdf(y) / multivariate_normal(np.zeros(4), Q).pdf(y)
        worst = max(worst, abs(float(cm_density(G, h, y)) / ref - 1.0))
    return worst


def cmd_check(cfg):
    """Structural invariant suite; exit code 4 when any row fails."""
    m, r = cfg.model, cfg.run
    s, t = r["s"], r["t"]
    mid = 0.5 * (s + t)
    rows = []

    def add(name, value, tol):
        rows.append({"check": name, "value": value, "tolerance": tol,
                     "status": "pass" if (value is not None and value <= tol) else "fail"})

    dense = _dense_reference(m.T)
    add("cocycle_" + ("dense" if m.kind == "dense" else "diagonal"), prop.cocycle_defect(m, s, mid, t),
        1e-8 if m.kind == "dense" else 1e-13)
    add("cocycle_dense_reference", prop.cocycle_defect(dense, s, mid, t), 1e-8)
    for name, mm in (("model", m), ("dense_reference", dense)):
        Q = prop.covariance(mm, s, t).matrix()
        Qq = prop.covariance_quadrature(mm, s, t)
        add(f"covariance_ode_vs_quadrature_{name}",
            float(np.max(np.abs(Q - Qq))) / max(float(np.max(np.abs(Qq))), 1e-300), 1e-8)
        mon = prop.cov_monotonicity_defect(mm, t, s, mid)
        add(f"covariance_monotonicity_{name}", mon.defect / max(mon.scale, 1e-300), 1e-10)
    phi = cfg.phi if (cfg.phi is not None and cfg.phi.kind == "cosine") else \
        fn.cosine(tuple(1.0 / (j + 1) for j in range(m.N)), 0.3)
    x = np.asarray(r["x"])
    add("chapman_kolmogorov", sg.chapman_defect(m, phi, s, mid, t, x), 1e-10)
    add("chapman_kolmogorov_dense_reference", sg.chapman_defect(dense, fn.cosine((1.0, -0.5, 0.25), 0.1), s, mid, t,
                                                                np.array([0.2, -0.1, 0.3])), 1e-10)
    add("in_recursion_vs_pairings", _pairings_defect(r["seed"]), 1e-12)
    add("cm_density_vs_pdf_ratio", _cm_defect(r["seed"]), 1e-10)
    if s < t:
        Q = prop.covariance(m, s, t)
        target = Q.matrix() @ np.ones(m.N)
        gm = prop.gramian_min_energy(m, s, t, target, 512)
        add("gramian_min_energy", gm.defect / max(gm.reference, 1e-300), 1e-3)
        sde = sg.sde_expectation(m, phi, s, t, x, r["n_paths"], r["n_steps"], r["seed"], cfg.threads)
        exact = sg.closed_form_value(prop.state(m, s, t, x), phi)
        em = sg.closed_form_value(sg.em_gaussian_law(m, s, t, x, r["n_steps"]), phi)
        allowance = 4.0 * sde.uncertainty + 2.0 * abs(em - exact)
        add("sde_vs_apply", abs(sde.value - exact) / max(allowance, 1e-300), 1.0)
    failed = [row["check"] for row in rows if row["status"] != "pass"]
    summary = {"checks": len(rows), "failed": len(failed)}
    return ("check", "value", "tolerance", "status"), rows, summary, (4 if failed else 0)


COMMANDS = {"evolve": cmd_evolve, "apply": cmd_apply, "deriv": cmd_deriv, "mild": cmd_mild,
            "fit-theta": cmd_fit_theta, "holder": cmd_holder, "zygmund": cmd_zygmund, "schauder": cmd_schauder,
            "check": cmd_check}


# ---------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="nouk", description="Ornstein-Uhlenbeck evolution operator toolkit")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="configuration file (check falls back to a built-in default)")
    p.add_argument("--seed", type=int, help="64-bit seed overriding [run] seed")
    p.add_argument("--threads", type=int, help="worker threads (default NOUK_THREADS or 1)")
    p.add_argument("--out", help="output directory (default .)")
    p.add_argument("--format", choices=("csv", "json"), help="report format")
    return p


def _human(command, summary, path):
    parts = [f"{k}={_cell(v)}" for k, v in sorted(summary.items())]
    return f"nouk {command}: " + " ".join(parts) + f"\nreport: {path}"


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            if args.subcommand != "check":
                raise ValidationError("--config is required")
            text = DEFAULT_CONFIG
        else:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ValidationError(f"cannot read config: {exc}") from None
        cfg, threads, out = load_config(text)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ValidationError("seed must fit in 64 bits")
            cfg.run["seed"] = args.seed
        if args.format is not None:
            cfg.run["format"] = args.format
        env = os.environ.get("NOUK_THREADS")
        if args.threads is not None:
            cfg.threads = args.threads
        elif env:
            try:
                cfg.threads = int(env)
            except ValueError:
                raise ValidationError("NOUK_THREADS must be an integer") from None
        elif threads is not None:
            cfg.threads = threads
        if cfg.threads < 1:
            raise ValidationError("threads must be >= 1")
        if not cfg.run["s"] <= cfg.run["t"]:
            raise ValidationError("require s <= t")
        out_dir = args.out or out or "."
        columns, rows, summary, code = COMMANDS[args.subcommand](cfg)
        path = write_report(out_dir, args.subcommand, cfg.run["format"], cfg, columns, rows, summary)
        print(_human(args.subcommand, summary, path))
        if code:
            print("invariant suite failed", file=sys.stderr)
        return code
    except NoukError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
