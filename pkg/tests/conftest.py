import numpy as np
import pytest

from raptarkit.analyzer import PatternModel, serve_in_thread
from raptarkit.arm import default_arm
from raptarkit.scene import default_scene


@pytest.fixture(scope="session")
def arm():
    return default_arm()


@pytest.fixture(scope="session")
def scene():
    return default_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def analyzer():
    """Factory for in-process analyzer servers on free ports; all are stopped afterwards."""
    servers = []

    def start(model=None, seed=0, power_fn=None):
        srv = serve_in_thread(model or PatternModel(), port=0, seed=seed, power_fn=power_fn)
        servers.append(srv)
        return srv

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


_ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Attach a measured-value detail line to an acceptance test's report."""

    def note(text: str) -> None:
        request.node.user_properties.append(("detail", text))

    return note


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or name not in _ACCEPTANCE:
            detail = "; ".join(v for k, v in report.user_properties if k == "detail")
            _ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{status}  {name}  {detail}")
