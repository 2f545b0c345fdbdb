import numpy as np
import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion and print it straight away."""

    def record(number, title, passed, detail):
        line = f"[criterion {number}] {'PASS' if passed else 'FAIL'} {title}: {detail}"
        request.config.stash[_RESULTS].append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
