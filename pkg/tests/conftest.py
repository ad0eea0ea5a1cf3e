import random
import sys
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from patientgraph.kg import load_kg_dir
from patientgraph.templates import data_path

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def toy_kg():
    return load_kg_dir(data_path("toy_kg"))


@pytest.fixture
def rng():
    return random.Random(1234)


_ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines, name):
        self.lines, self.name, self.notes = lines, name, []

    def note(self, text):
        self.notes.append(text)

    def elapsed(self):
        return time.perf_counter() - self.start

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes + ([f"{exc_type.__name__}: {exc}"] if exc_type else []))
        line = f"{status}  {self.name}  ({self.elapsed():.2f}s) {detail}".rstrip()
        self.lines.append(line)
        print(line)
        return False


@pytest.fixture
def criterion(request):
    """Context manager factory that logs one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    return lambda name: _Criterion(lines, name)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
