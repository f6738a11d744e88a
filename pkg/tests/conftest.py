import functools
import time

import pytest

from bifluid.coupling import run_level1
from bifluid.scenario import bundled_names, load_scenario

RUNTIMES = {}
ACCEPTANCE = {}


@functools.lru_cache(maxsize=None)
def cached_run(name, cells=None):
    """Scenario, trajectory and report of a bundled preset, computed once per session."""
    start = time.perf_counter()
    scen = load_scenario(name, cells=cells)
    traj, report = run_level1(scen)
    RUNTIMES[(name, cells)] = time.perf_counter() - start
    return scen, traj, report


@pytest.fixture(scope="session")
def run():
    return cached_run


@pytest.fixture(scope="session")
def scenario_names():
    return bundled_names()


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion."""
    def _record(number, title, passed, detail):
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
