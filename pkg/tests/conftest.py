import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ecsim.model import SpinParams, resonance_offset  # noqa: E402

# near-cancellation parameters (MHz) and the exactly cancelled variant (A = 2 omega_I)
NEAR = (-14.58, -29.06, 6.45)
EXACT = (-14.58, -29.16, 6.45)
# parameters reproducing the 29.42 / 1.83 MHz ESEEM lines at omega_I = -14.6 MHz
ESEEM_WI = -14.6
ESEEM_A = (29.42**2 - 1.83**2) / (2 * ESEEM_WI)
ESEEM_B = 2 * math.sqrt(1.83**2 - (ESEEM_WI - ESEEM_A / 2) ** 2)


def params(mhz, doublet="2324"):
    p = SpinParams.from_mhz(*mhz)
    return p.with_offset(resonance_offset(p, doublet))


@pytest.fixture
def near():
    return params(NEAR)


@pytest.fixture
def exact():
    return params(EXACT)


@pytest.fixture
def eseem_params():
    return params((ESEEM_WI, ESEEM_A, ESEEM_B))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
