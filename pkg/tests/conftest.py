import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(autouse=True, scope="session")
def _reference_cache(tmp_path_factory):
    """Keep reference-minimizer caches out of the user's home directory."""
    path = tmp_path_factory.mktemp("ref-cache")
    old = os.environ.get("BANACH_PD_CACHE")
    os.environ["BANACH_PD_CACHE"] = str(path)
    yield path
    if old is None:
        os.environ.pop("BANACH_PD_CACHE", None)
    else:
        os.environ["BANACH_PD_CACHE"] = old


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def report(number, name, ok, detail):
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
