import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from nouk import functions as fn
from nouk.errors import KernelComponent, NotSeparable
from nouk.gaussian import GaussianState, NormalSampler, cm_density, gh_expectation, gh_nodes, h_hat, sample

GOLDEN_NORMALS = np.array([[-1.2670877367133628, -0.15295188314962022, 0.4380169998212696],
                           [0.08156780510184533, 1.3869993327599652, -1.1926682415903789]])


def test_golden_stream():
    assert np.array_equal(NormalSampler(0).normals("golden", 0, 2, 3), GOLDEN_NORMALS)


def test_stream_offsets_and_ops():
    s = NormalSampler(7)
    full = s.normals("op", 0, 100, 2)
    assert np.array_equal(s.normals("op", 40, 10, 2), full[40:50])
    assert not np.array_equal(s.normals("other", 0, 100, 2), full)
    assert not np.array_equal(NormalSampler(8).normals("op", 0, 100, 2), full)


def test_zero_covariance_sample():
    G = GaussianState(mean=[1.0, -2.0], q=[0.0, 0.0])
    assert np.all(sample(G, 50, 0, "t") == [1.0, -2.0])


def test_sample_covariance_clt():
    n = 100_000
    y = sample(GaussianState(q=np.ones(3)), n, 3, "clt")
    assert np.max(np.abs(np.cov(y.T) - np.eye(3))) <= 3 / math.sqrt(n)


def test_sample_threads_identical():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    G = GaussianState(mean=[0.5, 0.1], cov=A)
    a = sample(G, 20000, 11, "thr", threads=1)
    b = sample(G, 20000, 11, "thr", threads=8)
    assert a.tobytes() == b.tobytes()


def test_h_hat_examples():
    N = 4
    y = np.arange(2.0, 2.0 + N)
    assert h_hat(GaussianState(q=np.ones(N)), np.eye(N)[0])(y) == 2.0
    assert h_hat(GaussianState(q=[4.0, 1.0]), [2.0, 0.0])([1.0, 5.0]) == pytest.approx(0.5)
    with pytest.raises(KernelComponent) as exc:
        h_hat(GaussianState(q=[1.0, 0.0]), [0.0, 1.0])
    assert exc.value.index == 2


def test_h_hat_variance():
    """Under N(0, Q) the functional has variance |Q^(-1/2) g|^2."""
    A = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]])
    G = GaussianState(cov=A)
    g = np.array([1.0, -1.0, 0.5])
    hh = h_hat(G, g)
    assert hh.norm_sq == pytest.approx(g @ np.linalg.solve(A, g), rel=1e-12)
    vals = hh(sample(G, 200_000, 1, "var"))
    assert np.var(vals) == pytest.approx(hh.norm_sq, rel=0.02)


def test_cm_density_examples():
    G = GaussianState(q=np.ones(3))
    assert cm_density(G, np.zeros(3), np.array([1.0, 2.0, 3.0])) == 1.0
    assert cm_density(G, np.eye(3)[0], np.zeros(3)) == pytest.approx(math.exp(-0.5))


def test_cm_density_pdf_ratio(rng):
    A = rng.normal(size=(4, 4))
    Q = A @ A.T + 0.1 * np.eye(4)
    G = GaussianState(cov=Q)
    h = rng.normal(size=4)
    for y in rng.normal(size=(100, 4)):
        ref = multivariate_normal(h, Q).pdf(y) / multivariate_normal(np.zeros(4), Q).pdf(y)
        assert cm_density(G, h, y) == pytest.approx(ref, rel=1e-10)


def test_change_of_measure_mc():
    """E[phi(Y + h)] = E[phi(Y) density(Y)] within four combined standard errors."""
    Q = np.array([[1.0, 0.3], [0.3, 0.5]])
    G = GaussianState(cov=Q)
    h = np.array([0.4, -0.2])
    y = sample(G, 2 ** 16, 5, "com")
    phi = fn.cosine((1.0, 0.7), 0.2)
    a = phi(y + h)
    b = phi(y) * cm_density(G, h, y)
    se = math.sqrt(np.var(a) / a.size + np.var(b) / b.size)
    assert abs(a.mean() - b.mean()) <= 4 * se


def test_rank_tolerance():
    G = GaussianState(cov=np.diag([1.0, 1e-20, 0.0]))
    assert G.rank == 1


def test_gh_examples():
    G = GaussianState(q=[0.3, 1.2, 0.0])
    m = np.array([0.1, -0.4, 2.0])
    assert gh_expectation(G, m, fn.constant(1.0)) == 1.0
    ell = np.array([1.5, -0.7, 0.3])
    phi = fn.cosine(ell)
    expect = math.cos(ell @ m) * math.exp(-0.5 * np.sum(G.eigvals * ell ** 2))
    assert gh_expectation(G, m, phi, 40) == pytest.approx(expect, abs=1e-12)
    with pytest.raises(NotSeparable):
        gh_expectation(G, m, fn.tanh_linear(ell))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.floats(-3, 3))
def test_gh_separable_vs_product(q, m, c):
    """A separable product expectation factors over modes; compare with 1-d quadrature by scipy."""
    from scipy import integrate
    fs = [fn.Factor("cos", 1.1, c), fn.Factor("tanh", 0.8), fn.Factor("const", 1.5)]
    phi = fn.separable_product(fs)
    G = GaussianState(q=q)
    val = gh_expectation(G, np.asarray(m), phi, 80)
    ref = 1.0
    for f, qq, mm in zip(fs, q, m):
        if qq == 0:
            ref *= float(f(np.array(mm)))
            continue
        sd = math.sqrt(qq)
        ref *= integrate.quad(lambda z: float(f(np.array(mm + sd * z))) * math.exp(-z * z / 2) / math.sqrt(2 * math.pi),
                              -12, 12, epsabs=1e-13, limit=200)[0]
    assert val == pytest.approx(ref, abs=1e-9)


def test_gh_nodes_bounds():
    from nouk.errors import ValidationError
    x, w = gh_nodes(20)
    assert w.sum() == pytest.approx(1.0) and x @ w == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValidationError):
        gh_nodes(151)
