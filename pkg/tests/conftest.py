import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sclab.grid import unit_box
from sclab.models import FluxModel, Models, NoiseModel

settings.register_profile("sclab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sclab")


@pytest.fixture
def grid100():
    return unit_box(1, 100)


@pytest.fixture
def burgers_det():
    """Cubic flux, no noise."""
    return Models(FluxModel(2, 1), NoiseModel.zero())


@pytest.fixture
def burgers_noisy():
    return Models(FluxModel(2, 1), NoiseModel.from_rule(8))


def sine(grid, amp=1.0):
    return grid.field(lambda *xs: amp * np.prod([np.sin(np.pi * x) for x in xs], axis=0))


# verdict lines from the acceptance suite, echoed after the run
CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
