import numpy as np
import pytest

from thermoforge.constitutive import NeuralThermoModel


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_F(rng, n, spread=0.2):
    """Deformation gradients near the identity with positive determinant."""
    return np.eye(3) + spread * rng.uniform(-1.0, 1.0, size=(n, 3, 3))


@pytest.fixture(scope="session")
def model():
    return NeuralThermoModel.initialize(7, temperature_scale=300.0, energy_scale=1000.0)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Records one acceptance line: ``criterion(number, text, passed)``."""

    def record(number, text, passed):
        ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
            terminalreporter.write_line(line)
