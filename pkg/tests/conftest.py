import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from curesem.ew import EwParams
from curesem.model import Dataset, Theta
from curesem.simulation import SETTINGS, SimDesign, generate_dataset

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


settings.register_profile(
    "fast", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("fast")


@pytest.fixture
def truth() -> Theta:
    return SimDesign().true_theta


@pytest.fixture(scope="session")
def small_data() -> Dataset:
    design = SimDesign(n=120, ew=SETTINGS[1])
    return generate_dataset(design, np.random.default_rng(11))


@pytest.fixture(scope="session")
def medium_data() -> Dataset:
    return generate_dataset(SimDesign(n=400), np.random.default_rng(5))


def theta_of(b0, b1, alpha, k, lam) -> Theta:
    return Theta((b0, b1), EwParams(alpha, k, lam))
