import numpy as np
import pytest

from blendexo.control import train_blend_weights
from blendexo.gait import GaitProfile, make_calibration_dataset
from blendexo.model import JointLimits


@pytest.fixture(scope="session")
def weights():
    """Blend weights calibrated on 30 s of 3.5 km/h walking at 100 Hz."""
    data = make_calibration_dataset(GaitProfile(speeds_kmh=(3.5,)), 30.0, 100.0)
    return train_blend_weights(data.Q, data.c)


def random_q(rng, n=None, margin=0.05):
    lo, hi = JointLimits().bounds()
    size = (6,) if n is None else (n, 6)
    return rng.uniform(lo + margin, hi - margin, size=size)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
