import numpy as np
import pytest

from xkep.dataset import Dataset, load_saheart, standardize


@pytest.fixture(scope="session")
def saheart():
    return load_saheart()


@pytest.fixture(scope="session")
def saheart_std(saheart):
    return standardize(saheart)[0]


def toy_dataset(n=200, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 0] > 0).astype(int)
    return Dataset(X, tuple(f"x{j + 1}" for j in range(d)), y)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    reports = [r for key in ("passed", "failed", "error") for r in terminalreporter.stats.get(key, [])
               if r.when == "call" and "test_acceptance.py::test_criterion_" in r.nodeid]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(reports, key=lambda r: r.nodeid):
        name = r.nodeid.split("::test_criterion_")[1]
        detail = dict(r.user_properties).get("detail", "")
        terminalreporter.write_line(f"criterion {name}: {'PASS' if r.passed else 'FAIL'}  {detail}")
