import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report(request):
    """Print a one-line acceptance verdict now and again in the final summary."""
    lines = request.config.stash.setdefault(_REPORT_KEY, [])
    terminal = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(number: int, passed: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        if terminal is not None:
            terminal.write_line("")
            terminal.write_line(line)
        return passed

    return emit


_REPORT_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
