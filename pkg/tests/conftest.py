import numpy as np
import pytest

from otcoherent.measures import DiscreteMeasure

# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE = []


def report(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
    ACCEPTANCE.append(line)
    print(line)
    return ok


def random_measure(rng, n, dim=2, uniform=False, scale=1.0):
    pts = rng.random((n, dim)) * scale
    if uniform:
        return DiscreteMeasure.uniform(pts)
    w = rng.random(n) + 0.1
    return DiscreteMeasure(pts, w / w.sum())


def two_blobs(rng, n_per=20, gap=3.0, spread=0.15, masses=(1.0, 1.0), shift=0.0):
    """Two Gaussian blobs on the x-axis; blob ``b`` gets total mass ``masses[b]``."""
    a = rng.normal([0.0 + shift, 0.0], spread, (n_per, 2))
    b = rng.normal([gap + shift, 0.0], spread, (n_per, 2))
    w = np.concatenate([np.full(n_per, masses[0] / n_per), np.full(n_per, masses[1] / n_per)])
    return DiscreteMeasure(np.vstack([a, b]), w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
