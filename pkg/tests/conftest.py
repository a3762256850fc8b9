import warnings

import numpy as np
import pytest

from gslith.contrast import ContrastCurve
from gslith.errors import UnderResolvedKernelWarning
from gslith.kernel import default_psf, discretize

ACCEPTANCE_RESULTS = []

# demo resist: 3 um PMGI stack, onset 300, clearing 1500 uC/cm2
T0, D0, DC = 3.0, 300.0, 1500.0


@pytest.fixture(scope="session")
def curve():
    return ContrastCurve.from_power_law(T0, D0, DC, gamma=2.0)


def coarse_kernel(pitch):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderResolvedKernelWarning)
        return discretize(default_psf(), pitch)


@pytest.fixture(scope="session")
def kernel_half_um():
    return coarse_kernel(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, text in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")
