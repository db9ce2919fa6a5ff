import pytest

from minlab import gallery
from minlab.mesh import build_truncated_mesh


@pytest.fixture(scope="session")
def surfaces():
    return {name: gallery.load(name) for name in gallery.BUILTIN}


@pytest.fixture(scope="session")
def truncations(surfaces):
    """Truncated meshes shared across test modules, built on first use."""
    cache = {}

    def get(name, R):
        key = (name, float(R))
        if key not in cache:
            cache[key] = build_truncated_mesh(surfaces[name], R)
        return cache[key]

    return get


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Print a pass/fail line for an acceptance criterion, then assert it."""

    def emit(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
