import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run hours-scale protocol runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow") or os.environ.get("GRICNN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; use --run-slow or GRICNN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def record_criterion():
    """Print and keep one PASS/FAIL line per acceptance criterion."""

    def record(number, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
