import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hardynls import groundstate as gs  # noqa: E402
from hardynls import nls_sim, spectral  # noqa: E402
from hardynls.ode import Params  # noqa: E402

CANON = Params(3, 2.0, -0.1)
SPOT = {Params(4, 1.2, -0.5): (0.1, 10.0), Params(5, 1.0, -1.0): (0.1, 100.0)}

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


@lru_cache(maxsize=None)
def _profile(params, n, bracket):
    return gs.solve_ground_state(params, bracket, {"n": n})


def profile_for(params: Params, n: int = 8001, bracket=(0.1, 10.0)):
    return _profile(params, n, tuple(map(float, bracket)))


@lru_cache(maxsize=None)
def model_for(n: int = 8001):
    return nls_sim.build_model(profile_for(CANON, n))


@lru_cache(maxsize=None)
def dichotomy_for(n: int = 8001):
    model = model_for(n)
    return spectral.dichotomy_eigenpair(nls_sim.discrete_profile(profile_for(CANON, n), model))


@lru_cache(maxsize=None)
def _spectrum(params, n, bracket):
    return spectral.spectrum_report(profile_for(params, n, bracket))


def spectrum_for(params: Params, n: int = 8001, bracket=(0.1, 10.0)):
    return _spectrum(params, n, tuple(map(float, bracket)))


@lru_cache(maxsize=None)
def run_for(direction: str, delta: float = 1e-3, T: float = 0.8, dt: float = 1e-3, record_every: int = 10):
    model = model_for()
    if direction == "none":
        cfg = nls_sim.RunConfig(3, 2.0, -0.1, dt, T, 0.0, "none", 20.0, record_every)
        return nls_sim.evolve(None, model, cfg, v0=np.zeros(model.Q.shape, dtype=complex))
    return nls_sim.run_perturbed(direction, delta, T, model, dichotomy_for(), dt, 20.0, record_every)


@pytest.fixture(scope="session")
def profile():
    return profile_for(CANON)


@pytest.fixture(scope="session")
def profile_fine():
    return profile_for(CANON, 16001)


@pytest.fixture(scope="session")
def model():
    return model_for()


@pytest.fixture(scope="session")
def dichotomy():
    return dichotomy_for()


@pytest.fixture(scope="session")
def report():
    return spectrum_for(CANON)


@pytest.fixture(scope="session")
def report_fine():
    return spectrum_for(CANON, 16001)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
