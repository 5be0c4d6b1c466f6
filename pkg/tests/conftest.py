import numpy as np
import pytest

from kmeanslab.core import means
from kmeanslab.dataset import SyntheticSpec, generate_clusterable, simplex_centers

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report():
    def record(label, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        print(ACCEPTANCE_LINES[-1])

    return record


@pytest.fixture(scope="session")
def planted2():
    """Two unit balls 10 apart, 50 points each."""
    spec = SyntheticSpec(((0.0, 0.0), (10.0, 0.0)), (50, 50), 1.0, seed=7)
    ds, centers, A = generate_clusterable(spec)
    return ds, centers, A


@pytest.fixture(scope="session")
def planted3():
    """Three small balls (radius 0.1) at least 100 apart."""
    spec = SyntheticSpec(((0.0, 0.0), (100.0, 0.0), (50.0, 120.0)), (40, 50, 60), 0.1, seed=3)
    ds, centers, A = generate_clusterable(spec)
    return ds, centers, A, means(ds, A)


ACCEPT_SPEC = SyntheticSpec(simplex_centers(3, 100, 10.0), (1000, 1000, 1000), 5e-4, seed=2016)


@pytest.fixture(scope="session")
def accept_fixture():
    """k=3, n=3000 in R^100; separation, margin and balance all hold for alpha=0.01."""
    ds, centers, A = generate_clusterable(ACCEPT_SPEC)
    return ds, centers, A, means(ds, A)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
