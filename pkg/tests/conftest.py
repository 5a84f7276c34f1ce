import numpy as np
import pytest
import torch

from vfexplore.oracle import GaussianBump, UncertaintyField
from vfexplore.shaping import ShapingConfig

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_bump_field():
    return UncertaintyField((GaussianBump(1.0, (0.5, 0.5), 0.1),))


@pytest.fixture
def two_bump_field():
    return UncertaintyField.from_specs(
        [
            {"amplitude": 2.0, "center": [0.3, 0.6], "sigma": 0.15},
            {"amplitude": 1.5, "center": [0.7, 0.3], "sigma": 0.2},
        ]
    )


@pytest.fixture
def shaping_cfg():
    return ShapingConfig(u_mid=0.5, eps_unsafe=0.1)


ACCEPTANCE_LINES: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: numbered acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
