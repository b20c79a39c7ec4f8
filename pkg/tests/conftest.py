import numpy as np
import pytest

from nouk.model import EvolutionModel, preset_model
from nouk.timefn import const


def diag_model(a, b, N, T=1.0, f=None):
    """Diagonal model with constant per-mode drift and diffusion."""
    a = np.broadcast_to(np.asarray(a, dtype=float), (N,))
    b = np.broadcast_to(np.asarray(b, dtype=float), (N,))
    fs = () if f is None else tuple(const(v) for v in np.broadcast_to(np.asarray(f, dtype=float), (N,)))
    return EvolutionModel(T, N, "diagonal", tuple(const(v) for v in a), tuple(const(v) for v in b), fs)


def dense_model(rng, N=4, T=1.0):
    """Random stable dense model with a time-modulated drift."""
    from nouk.timefn import trig
    A0 = rng.normal(size=(N, N)) * 0.5 - np.eye(N)
    A1 = rng.normal(size=(N, N)) * 0.3
    B0 = rng.normal(size=(N, N)) * 0.5 + np.eye(N)
    return EvolutionModel(T, N, "dense", A_terms=((const(1.0), A0.tolist()), (trig(1.0, 2.0, 0.0, 0.0), A1.tolist())),
                          B_terms=((const(1.0), B0.tolist()),))


@pytest.fixture
def flat4():
    return preset_model("flat", 4)


@pytest.fixture
def example1():
    return preset_model("example1", 4)


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
