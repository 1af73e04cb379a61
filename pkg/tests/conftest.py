import numpy as np
import pytest

from statereach.sim import calibrate_state_ranges, make_env


@pytest.fixture(scope="session")
def hopper():
    return make_env("planar_hopper")


@pytest.fixture(scope="session")
def cart():
    return make_env("pendulum_cart")


@pytest.fixture(scope="session")
def point():
    return make_env("point_mass")


@pytest.fixture(scope="session")
def hopper_ranges(hopper):
    return calibrate_state_ranges(hopper, seed=0)


@pytest.fixture(scope="session")
def cart_ranges(cart):
    return calibrate_state_ranges(cart, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
