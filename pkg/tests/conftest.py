import numpy as np
import pytest
from hypothesis import settings

from ibrplace.case_io import load_bundled

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def case39():
    return load_bundled("case39")


@pytest.fixture(scope="session")
def case145():
    return load_bundled("case145")


@pytest.fixture(scope="session")
def case300():
    return load_bundled("case300")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line; returned callable takes (name, ok, detail)."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
