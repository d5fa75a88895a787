import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from homsurf.convergence import SweepConfig, run_sweep

settings.register_profile("homsurf", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("homsurf")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def sweeps():
    """Session-wide memo of sweep tables keyed on the SweepConfig fields.

    The first computation's wall time is kept in ``extras["elapsed"]``.
    """
    store = {}

    def get(**kw):
        key = tuple(sorted((k, repr(v)) for k, v in kw.items()))
        if key not in store:
            t0 = time.perf_counter()
            table = run_sweep(SweepConfig(**kw))
            table.extras["elapsed"] = time.perf_counter() - t0
            store[key] = table
        return store[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
