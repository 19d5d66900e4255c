import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stereohb import inversion, spectra  # noqa: E402

ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail, soft=False):
    status = "PASS" if ok else ("SOFT-FAIL" if soft else "FAIL")
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {status}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def bundle():
    return spectra.default_bundle()


@pytest.fixture(scope="session")
def white(bundle):
    return bundle.response.white_balanced(bundle.illuminant)


@pytest.fixture(scope="session")
def op_stereo(white):
    return inversion.build_tikhonov_operator(white)


@pytest.fixture(scope="session")
def op_mono(white):
    return inversion.build_tikhonov_operator(white.camera("left"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
