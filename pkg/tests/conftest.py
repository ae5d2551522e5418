import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gridmfg.core import Generator, Line, Network  # noqa: E402
from gridmfg.dispatch import linearize_costs  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running market simulations")
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")


@pytest.fixture
def one_bus():
    gens = [Generator("cheap", 0, "oil", 0.0, 10.0, 50.0), Generator("dear", 0, "oil", 0.0, 20.0, 50.0)]
    net = Network(1, np.zeros((0, 1)), [], gens)
    return net, linearize_costs(net, net.p_max)


@pytest.fixture
def congested():
    """Cheap unit at bus 0, dear unit (b=30) at bus 1, one 10 MW line; bus 1 is the hub."""
    gens = [Generator("cheap", 0, "oil", 0.0, 10.0, 50.0), Generator("dear", 1, "oil", 0.0, 30.0, 50.0)]
    net = Network(2, np.array([[1.0, 0.0]]), [Line("L0", 10.0)], gens)
    return net, linearize_costs(net, net.p_max)


_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark:
            n, title = mark.args
            _CRITERIA.setdefault(n, (title, []))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark and (rep.when == "call" or rep.failed or rep.skipped):
        _CRITERIA[mark.args[0]][1].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[n]
        ok = bool(outcomes) and all(o == "passed" for o in outcomes)
        status = "PASS" if ok else ("NOT RUN" if not outcomes else "FAIL")
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
