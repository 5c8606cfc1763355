import numpy as np
import pytest

from dicke_monodromy import lattice as L
from dicke_monodromy import quantum as Q
from dicke_monodromy.params import ModelParams


def em(params, lo=0, hi=None):
    hi = int(3 * params.j) if hi is None else hi
    return L.em_lattice(Q.mblock_spectra(params, range(lo, hi + 1)))


@pytest.fixture(scope="session")
def tuned():
    return ModelParams(1.0, 1.0, 2.5, 0.0, 40)


@pytest.fixture(scope="session")
def detuned():
    return ModelParams(2.0, 1.0, 2.5, 0.0, 40)


@pytest.fixture(scope="session")
def tuned_lattice(tuned):
    return em(tuned)


@pytest.fixture(scope="session")
def detuned_lattice(detuned):
    return em(detuned)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
