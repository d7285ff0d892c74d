import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csbp.mechanism import Atomic, BranchingMechanism, StableDensity

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def feller():
    return BranchingMechanism.feller(1.0)


@pytest.fixture
def stable15():
    return BranchingMechanism.power(1.5)


@pytest.fixture
def quad_atomic():
    """u^2 plus a unit atom at 1: index 2 at zero, not a pure power."""
    return BranchingMechanism(0.0, 1.0, (Atomic(((1.0, 1.0),)),))


def mechanism_zoo():
    return {
        "feller": BranchingMechanism.feller(1.0),
        "stable1.5": BranchingMechanism.power(1.5),
        "stable1.9": BranchingMechanism.power(1.9),
        "stable-raw": BranchingMechanism(0.0, 0.0, (StableDensity(1.3, 0.7),)),
        "quad+atomic": BranchingMechanism(0.0, 1.0, (Atomic(((1.0, 1.0), (3.0, 0.5))),)),
        "atomic": BranchingMechanism(0.0, 0.0, (Atomic(((2.0, 1.0),)),)),
    }


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
