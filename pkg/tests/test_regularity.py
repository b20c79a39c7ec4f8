import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import diag_model
from nouk import functions as fn
from nouk import regularity as reg
from nouk.errors import DegenerateFit, UnsupportedFunction, ValidationError
from nouk.model import DirectionSpace, direction_space, preset_model

AMB2 = DirectionSpace((1.0, 1.0))
AMB3 = DirectionSpace((1.0, 1.0, 1.0))


# ---------------------------------------------------------------- fits

@given(st.floats(-3, 3), st.floats(-5, 5))
def test_fit_recovers_power_law(p, c):
    x = np.geomspace(1e-3, 1.0, 7)
    fit = reg.fit_loglog(x, math.exp(c) * x ** p)
    assert fit.slope == pytest.approx(p, abs=1e-9)
    assert fit.intercept == pytest.approx(c, abs=1e-8)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_weights_and_errors():
    fit = reg.fit_loglog([1, 2, 4, 8], [1, 2, 4, 8.5])
    assert fit.weights == (0.5, 1.0, 1.0, 0.5)
    with pytest.raises(DegenerateFit):
        reg.fit_loglog([1, 2], [1, 2])
    with pytest.raises(DegenerateFit):
        reg.fit_loglog([1, 2, 3], [1, 0, 2])


# ---------------------------------------------------------------- seminorms

def test_holder_constant_function():
    assert reg.holder_seminorm(lambda x: 2.0, AMB2, 1.0, budget=64).value == 0.0


def test_holder_linear():
    ell = np.array([1.5, -2.0])
    est = reg.holder_seminorm(lambda x: float(ell @ x), AMB2, 1.0, budget=256, seed=1)
    assert 0.95 * 2.5 <= est.value <= 2.5 * (1 + 1e-12)
    assert est.recompute(lambda x: float(ell @ x), AMB2) == est.value


def test_holder_abs_sin():
    phi = fn.abs_sin((1.0, 0.0))
    est = reg.holder_seminorm(phi, AMB2, 1.0, budget=256, seed=2)
    assert 0.9 <= est.value <= 1.0 + 1e-12


def test_holder_half_on_sqrt():
    f = lambda x: math.sqrt(abs(x[0]))
    est = reg.holder_seminorm(f, AMB2, 0.5, budget=256, seed=0)
    assert 0.9 <= est.value <= 1.0 + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_holder_monotone_in_budget(seed):
    phi = fn.tanh_linear((1.0, 0.7, -0.3))
    values = [reg.holder_seminorm(phi, AMB3, 1.0, budget=b, seed=seed).value for b in (16, 32, 64, 128)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_zygmund_affine_and_quadratic():
    assert reg.zygmund_seminorm(lambda x: 3.0 * x[0] - x[1] + 1.0, AMB2, budget=64).value <= 1e-10
    est = reg.zygmund_seminorm(lambda x: x[0] ** 2, AMB2, budget=256, h_range=(1e-3, 0.1))
    assert est.value == pytest.approx(2 * 0.1, rel=0.05)
    assert est.value <= 2 * 0.1 * (1 + 1e-9)


def test_zygmund_verdicts():
    h = np.geomspace(1e-3, 1e-1, 5)
    assert reg.zygmund_verdict(h, np.ones(5))[1] == "bounded"
    assert reg.zygmund_verdict(h, (0.1 / h) ** 0.3)[1] == "inconclusive"
    assert reg.zygmund_verdict(h, -np.log(h))[1] == "bounded"
    assert reg.zygmund_verdict(h, (0.1 / h) ** 0.6)[1] == "unbounded"
    assert reg.zygmund_verdict(h, np.zeros(5)) == (1.0, "bounded")


def test_zygmund_profile_cos_and_x_log_x():
    prof = reg.zygmund_profile(lambda x: math.cos(x[0]), AMB2, np.geomspace(1e-3, 1e-1, 5), budget=32)
    assert prof.verdict == "bounded"
    # x log|x| is Zygmund but not Lipschitz: ratio grows only logarithmically
    f = lambda x: x[0] * math.log(abs(x[0])) if x[0] != 0 else 0.0
    prof = reg.zygmund_profile(f, AMB2, np.geomspace(1e-3, 1e-1, 5), budget=64, directions=[np.array([1.0, 0])])
    assert prof.verdict in ("bounded", "inconclusive")
    assert prof.ratio < 10


def test_modulus_fit_examples():
    r = np.geomspace(1e-3, 1e-1, 8)
    ell = np.array([1.0, 2.0])
    assert reg.modulus_fit(lambda x: float(ell @ x), AMB2, r).slope == pytest.approx(1.0, abs=0.02)
    assert reg.modulus_fit(fn.abs_sin((1.0, 0.0)), AMB2, r).slope == pytest.approx(1.0, abs=0.05)
    with pytest.raises(DegenerateFit):
        reg.modulus_fit(lambda x: 1.0, AMB2, r)
    with pytest.raises(ValidationError):
        reg.modulus_fit(lambda x: x[0], AMB2, r[:5])


# ---------------------------------------------------------------- theta and blow-up

def test_theta_flat():
    m = diag_model(0.0, 1.0, 4)
    fit = reg.theta_fit(m, direction_space("ambient", m), 1.0, 1.0 - np.geomspace(1e-4, 1e-1, 8))
    assert -fit.slope == pytest.approx(0.5, abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0)


def test_theta_example1():
    m = preset_model("example1", 16)
    fit = reg.theta_fit(m, direction_space("cm_at", m, t0=0.0), 1.0, 1.0 - np.geomspace(1e-6, 1e-3, 8))
    assert 0.45 <= -fit.slope <= 0.55 and fit.r_squared >= 0.99


def test_theta_heat_colored_noise():
    m = preset_model("heat", 64, gamma=0.5)
    fit = reg.theta_fit(m, direction_space("ambient", m), 0.1, 0.1 - np.geomspace(1e-4, 1e-2, 8))
    assert -fit.slope == pytest.approx(0.75, abs=0.05)


def test_blowup_smooth_no_growth():
    m = diag_model(0.0, 1.0, 2)
    E = direction_space("ambient", m)
    fit = reg.blowup_check(m, E, fn.cosine((1.0, 0.0)), 2, 1.0, 1.0 - np.geomspace(1e-3, 1e-1, 5), budget=8)
    assert fit.slope >= -0.1


def test_blowup_cos_first_order_bounded():
    """A smooth datum does not blow up: the transported derivative is used."""
    m = diag_model(0.0, 1.0, 2)
    E = direction_space("ambient", m)
    fit = reg.blowup_check(m, E, fn.cosine((1.0, 0.0)), 1, 1.0, 1.0 - np.geomspace(1e-3, 1e-1, 5), budget=8)
    assert abs(fit.slope) < 0.05


def test_blowup_abs_sin_second_order():
    m = diag_model(0.0, 1.0, 2)
    E = direction_space("ambient", m)
    fit = reg.blowup_check(m, E, fn.abs_sin((1.0, 0.0)), 2, 1.0, 1.0 - np.geomspace(1e-3, 1e-1, 6), budget=8)
    assert fit.slope == pytest.approx(-0.5, abs=0.1)


# ---------------------------------------------------------------- range inclusion and interpolation

def test_range_inclusion_examples(rng):
    L = rng.normal(size=(3, 4))
    r = reg.range_inclusion(L, L)
    assert r.holds and r.C == pytest.approx(1.0)
    r = reg.range_inclusion(2 * L, L)
    assert r.holds and r.C == pytest.approx(2.0) and r.C_pinv == pytest.approx(2.0)
    assert not reg.range_inclusion(np.diag([0.0, 1.0]), np.diag([1.0, 0.0])).holds


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_range_inclusion_constant_is_sharp(seed):
    rng = np.random.default_rng(seed)
    L2 = rng.normal(size=(4, 4))
    L1 = L2 @ rng.normal(size=(4, 3))
    r = reg.range_inclusion(L1, L2)
    assert r.holds
    xs = rng.normal(size=(200, 4))
    ratios = np.linalg.norm(xs @ L1, axis=1) / np.linalg.norm(xs @ L2, axis=1)
    assert np.max(ratios) <= r.C * (1 + 1e-9)


def test_interp_examples():
    E = DirectionSpace((1.0, 1.0))
    const = reg.interp_check(fn.constant(0.7), E, 0.0, 0.5, 0)
    assert const.holds and const.lhs == pytest.approx(0.7) and const.rhs == pytest.approx(0.7)
    cosr = reg.interp_check(fn.cosine((1.0, 0.0)), E, 0.0, 0.5, 0)
    assert not cosr.holds and cosr.min_constant == pytest.approx(1.558, abs=1e-3)
    with pytest.raises(UnsupportedFunction):
        reg.interp_check(fn.abs_sin((1.0, 0.0)), E, 0.0, 0.5, 0)


def test_cosine_holder_norm_vs_sampled():
    """The closed-form Hoelder part of cos is attained; the sampler gets close from below."""
    E = DirectionSpace((1.0, 1.0))
    phi = fn.cosine((1.0, 0.0))
    est = reg.holder_seminorm(phi, E, 0.5, box=(-4, 4), budget=512, h_range=(0.5, 3.5))
    exact = reg.cosine_holder_norm(phi, E, 0.5) - 1.0
    assert 0.97 * exact <= est.value <= exact * (1 + 1e-9)


# ---------------------------------------------------------------- Schauder report

def test_schauder_smooth_u0_bounded():
    m = preset_model("example1", 3)
    E = direction_space("cm_at", m, t0=0.0)
    phi = fn.cosine((1.0, 0.5, 0.0))
    rows = reg.schauder_report(m, E, 0.5, phi, None, 1.0, 0.5, [0.2, 0.6, 0.95], budget=6, part="u0")
    assert [r["n"] for r in rows[:3]] == [0, 1, 2]
    L = float(E.dual_norm(phi.ell))
    for r in rows:
        assert r["sup"] <= L ** r["n"] * (1 + 1e-9)
    for r in rows:
        assert set(r) == {"s", "n", "sup", "gamma", "expected_exponent", "fitted_exponent", "r_squared",
                          "zygmund_ratio", "verdict"}


def test_schauder_validation():
    m = preset_model("flat", 2)
    E = direction_space("ambient", m)
    with pytest.raises(ValidationError):
        reg.schauder_report(m, E, 0.5, fn.constant(1.0), None, 1.0, 1.0, [0.5])
    with pytest.raises(ValidationError):
        reg.solution_evaluator(m, E, 0.5, None, None, 0.5, 1.0, np.ones(2), 0, part="v")
