import os

import numpy as np
import pytest

from gffiic.lattice import BoxGeom

# Lines printed by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def budget():
    """'desk' (default) or 'full' (the stated replicate counts and scales)."""
    return os.environ.get("GFFIIC_BUDGET", "desk").strip().lower()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section(f"acceptance criteria (budget: {budget()})")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def box1():
    return BoxGeom(3, 1)


@pytest.fixture
def box4():
    return BoxGeom(3, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
