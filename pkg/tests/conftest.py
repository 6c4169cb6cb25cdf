import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nomablind.modset import case_table

settings.register_profile("nomablind", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("nomablind")

CASES = ("case1", "case2", "case3")


@pytest.fixture(params=CASES)
def table(request):
    return case_table(request.param)


@pytest.fixture
def case1():
    return case_table("case1")


@pytest.fixture
def case2():
    return case_table("case2")


@pytest.fixture
def case3():
    return case_table("case3")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance outcomes, filled by test_acceptance.py and echoed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
