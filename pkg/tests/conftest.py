import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lanefit", deadline=None, max_examples=100)
settings.load_profile("lanefit")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def record_acceptance(name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
