import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_simplex(rng, dim, min_quality=0.1):
    """Random simplex whose normalized volume is not too small (well away from degeneracy)."""
    while True:
        p = rng.normal(size=(dim + 1, dim))
        e = p[1:] - p[0]
        vol = abs(np.linalg.det(e))
        edges = [np.linalg.norm(p[a] - p[b]) for a in range(dim + 1) for b in range(a)]
        if vol / max(edges) ** dim > min_quality:
            return p


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance report: one pass/fail line per criterion ----------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """``criterion(number, ok, detail)`` prints and records one verdict line."""

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
