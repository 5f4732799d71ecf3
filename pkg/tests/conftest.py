import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from pdgen.dataset import load_bundle, shipped_bundle_path  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bundles():
    return {name: load_bundle(shipped_bundle_path(name)) for name in ("blocksworld", "cooking", "hanoi")}


@pytest.fixture(scope="session")
def cooking(bundles):
    return bundles["cooking"]


@pytest.fixture(scope="session")
def blocksworld(bundles):
    return bundles["blocksworld"]


@pytest.fixture(scope="session")
def hanoi(bundles):
    return bundles["hanoi"]
