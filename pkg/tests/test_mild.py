import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from conftest import diag_model
from nouk import functions as fn
from nouk import mild
from nouk import propagator as prop
from nouk import semigroup as sg
from nouk.errors import DivergentSingularity, ValidationError
from nouk.model import direction_space, preset_model
from nouk.timefn import const, poly, trig

ZERO_PSI = fn.SourceTerm(const(0.0), fn.constant(0.0))


def test_u0_examples(example1):
    phi = fn.cosine((1.0, 0.5, 0.0, 0.0), 0.2)
    x = np.array([0.1, 0.2, 0.3, 0.4])
    assert mild.u0(example1, phi, 0.5, 0.5, x).value == phi(x)
    assert mild.u0(example1, fn.constant(3.0), 0.1, 0.9, x).value == 3.0
    G = prop.state(example1, 0.1, 0.9, x)
    assert mild.u0(example1, phi, 0.1, 0.9, x).value == pytest.approx(sg.closed_form_value(G, phi), abs=1e-15)


def test_u1_constant_source(example1):
    psi = fn.SourceTerm(const(2.5), fn.constant(1.0))
    assert mild.u1(example1, psi, 0.2, 0.9, np.zeros(4)).value == pytest.approx(-2.5 * 0.7, abs=1e-12)
    assert mild.u1(example1, psi, 0.4, 0.4, np.zeros(4)).value == 0.0


@pytest.mark.parametrize("rho", [const(1.0), poly(1.0, -0.5), trig(1.0, 3.0, 0.2, 0.5)])
def test_u1_cosine_vs_reference(rho):
    m = diag_model([-1.0, -3.0], [1.0, 0.7], 2, f=[0.2, 0.0])
    psi = fn.SourceTerm(rho, fn.cosine((1.0, 0.0)))
    x = np.array([0.3, -0.4])
    ref = -integrate.quad(lambda r: rho(r) * sg.closed_form_value(prop.state(m, 0.2, r, x), psi.phi), 0.2, 0.9,
                          epsabs=1e-14, epsrel=1e-13)[0]
    assert mild.u1(m, psi, 0.2, 0.9, x).value == pytest.approx(ref, abs=1e-10)


def test_mild_solution_examples(example1):
    phi = fn.cosine((1.0, 0.5, 0.0, 0.0))
    x = np.array([0.1, 0.2, 0.3, 0.4])
    assert mild.mild_solution(example1, phi, ZERO_PSI, 0.3, 1.0, x).value == mild.u0(example1, phi, 0.3, 1.0, x).value
    one = fn.SourceTerm(const(1.0), fn.constant(1.0))
    assert mild.mild_solution(example1, fn.constant(0.0), one, 0.3, 1.0, x).value == pytest.approx(-0.7, abs=1e-14)


def test_mild_derivative_constant_source(example1):
    E = direction_space("cm_at", example1, t0=0.0)
    phi = fn.cosine((1.0, 0.5, 0.0, 0.0))
    psi = fn.SourceTerm(const(1.0), fn.constant(4.0))
    x = np.zeros(4)
    dirs = [np.eye(4)[0]]
    d = mild.mild_derivative(example1, E, phi, psi, 0.3, 1.0, x, dirs, 0.5)
    ref = sg.transported_derivative(example1, phi, 0.3, 1.0, x, dirs, method="closed_form")
    assert d.value == ref.value


def test_mild_derivative_vs_fd(example1):
    E = direction_space("cm_at", example1, t0=0.0)
    phi = fn.constant(0.0)
    psi = fn.SourceTerm(const(1.0), fn.cosine((1.0, 0.0, 0.0, 0.0)))
    x = np.array([0.3, 0.1, 0.0, -0.2])
    h = [np.array([1.0, 0.5, 0.0, 0.0])]
    d = mild.mild_derivative(example1, E, phi, psi, 0.4, 1.0, x, h, 0.5)
    fd = sg.fd_derivative(lambda y: mild.mild_solution(example1, phi, psi, 0.4, 1.0, y).value, x, h)
    assert d.value == pytest.approx(fd.value, rel=1e-4)


def test_rough_source_derivative_vs_fd(flat4):
    """|sin| source, first derivative through the smoothing weight (integrable (s-sigma)^(-1/2))."""
    E = direction_space("ambient", flat4)
    psi = fn.SourceTerm(const(1.0), fn.abs_sin((1.0, 0.0, 0.0, 0.0)))
    x = np.array([0.4, 0.0, 0.0, 0.0])
    h = [np.eye(4)[0]]
    d = mild.u1_derivative(flat4, E, psi, 0.0, 1.0, x, h, 0.5, method="closed_form")
    fd = sg.fd_derivative(lambda y: mild.u1(flat4, psi, 0.0, 1.0, y, method="closed_form").value, x, h)
    assert d.value == pytest.approx(fd.value, rel=1e-5)


def test_divergent_singularity(example1):
    E = direction_space("cm_at", example1, t0=0.0)
    psi = fn.SourceTerm(const(1.0), fn.abs_sin((1.0, 0.0, 0.0, 0.0)))
    dirs = [np.eye(4)[0]] * 3
    with pytest.raises(DivergentSingularity):
        mild.mild_derivative(example1, E, fn.constant(0.0), psi, 0.2, 1.0, np.zeros(4), dirs, 0.5)
    with pytest.raises(DivergentSingularity):
        mild.u1_derivative(example1, E, psi, 0.2, 1.0, np.zeros(4), dirs[:2], 0.5)


def test_psi_regularity_override(flat4):
    """Declared Lipschitz regularity makes the second derivative integrable; the value stays finite."""
    E = direction_space("ambient", flat4)
    psi = fn.SourceTerm(const(1.0), fn.abs_sin((1.0, 0.0, 0.0, 0.0)))
    d = mild.u1_derivative(flat4, E, psi, 0.0, 1.0, np.array([0.4, 0, 0, 0]), [np.eye(4)[0]] * 2, 0.5,
                           method="closed_form", psi_regularity=1)
    assert math.isfinite(d.value)


def test_quadspec_validation():
    with pytest.raises(ValidationError):
        mild.QuadSpec(panels=0)
    with pytest.raises(ValidationError):
        mild.QuadSpec(ratio=1.0)
    with pytest.raises(ValidationError):
        mild.QuadSpec(theta_hint=1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(0.05, 1.0), st.integers(1, 30))
def test_time_mesh_properties(s, length, panels):
    t = s + length
    edges = mild.time_mesh(mild.QuadSpec(panels=panels), s, t)
    assert edges[0] == s and edges[-1] == pytest.approx(t, rel=1e-15)
    assert np.all(np.diff(edges) > 0)
    assert edges.size == panels + 2


@pytest.mark.parametrize("beta", [0.0, 0.25, 0.5, 0.75, 0.95])
def test_graded_rule_on_singular_integrand(beta):
    s, t = 0.2, 1.0
    quad = mild.QuadSpec(theta_hint=beta)
    f = lambda r: sg.EvalReport((r - s) ** -beta * math.cos(r), 0.0, "closed_form", 0, 0)
    val, err, _ = mild._integrate(f, quad, s, t)
    ref = integrate.quad(lambda r: math.cos(r), s, t, weight="alg", wvar=(-beta, 0.0))[0]
    assert val == pytest.approx(ref, rel=1e-8)
    assert abs(val - ref) <= err < 1e-5
