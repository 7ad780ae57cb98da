from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from brownlab import boxes, field, paths
from brownlab.rng import RngStream

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SEED = 20240611


@pytest.fixture(scope="session")
def params():
    return boxes.GoodnessParams(5, Fraction(1, 5), 0.8)


@pytest.fixture(scope="session")
def family3(params):
    fam = boxes.sample_good_family(params, 3, RngStream(SEED).substream("family3"))
    fam.validate()
    return fam


@pytest.fixture(scope="session")
def field3(family3):
    return field.ExceptionalField(family3)


@pytest.fixture(scope="session")
def small_tree():
    return paths.build_crossing_tree(3, 4, RngStream(SEED).substream("tree"), durations="sampled")


@pytest.fixture(scope="session")
def fine_path():
    return paths.sample_fine_path(1.0, 2.0 ** -14, RngStream(SEED).substream("path"))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(number: int, title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
