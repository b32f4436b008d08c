import sys
from pathlib import Path

import pytest

from energyref import kernels
from energyref.dataset import generate_fixture
from energyref.energy import MeterProfile
from energyref.referee import Referee

sys.path.insert(0, str(Path(__file__).parent))


class FakeClock:
    def __init__(self, start: float = 1000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> float:
        self.now += seconds
        return self.now


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    return kernels.get_backend(request.param)


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    return generate_fixture(root, num_images=20, num_classes=5, seed=1, min_objects=1)


@pytest.fixture
def referee(small_fixture, clock, tmp_path):
    return Referee(small_fixture, teams={"alpha": "pw-a", "beta": "pw-b"},
                   meter_profile=MeterProfile.constant(6.0), clock=clock,
                   report_dir=tmp_path / "reports")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
