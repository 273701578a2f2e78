import math
import os

import numpy as np
import pytest
from hypothesis import settings

from tracklearn.geometry import PathBuffer
from tracklearn.pipeline.paths import PathGenSpec, generate_virtual_paths

# fixed example sequence so that a green run stays green; HYPOTHESIS_PROFILE=explore for random search
settings.register_profile("repro", derandomize=True)
settings.register_profile("explore", derandomize=False)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repro"))


def straight_path(n=200, spacing=0.25, speed=5.0, heading=0.0, name="straight"):
    s = spacing * np.arange(n)
    return PathBuffer(s / speed, s * math.cos(heading), s * math.sin(heading), np.full(n, heading),
                      np.full(n, speed), name=name)


def circle_path(radius=20.0, n=400, speed=5.0, name="circle"):
    ds = speed * 0.05
    phi = ds / radius * np.arange(n)
    return PathBuffer(0.05 * np.arange(n), radius * np.sin(phi), radius * (1.0 - np.cos(phi)), phi,
                      np.full(n, speed), name=name)


@pytest.fixture(scope="session")
def scenarios():
    return generate_virtual_paths(PathGenSpec(), np.random.default_rng(0))


@pytest.fixture
def straight():
    return straight_path()


ACCEPTANCE_LINES = {}


def record_acceptance(number, title, passed, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
