import pytest

from kvflow.assembly import assemble_forms
from kvflow.mesh import build_structured

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def forms_cache():
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = assemble_forms(build_structured(n))
        return cache[n]

    return get


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
