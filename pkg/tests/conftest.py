import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import blobs  # noqa: E402

CRITERIA_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "dataset: needs the bundled raw digit files")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def known_novel_blobs(n_known=4, n_novel=3, n_per=60, d=8, sep=12.0, spread=1.0, seed=0):
    """Separable Gaussian classes; the last ``n_novel`` are the novel ones."""
    r = np.random.default_rng(seed)
    centers = r.standard_normal((n_known + n_novel, d))
    centers *= sep / np.linalg.norm(centers, axis=1, keepdims=True)
    X, y = blobs(centers, n_per, spread, r)
    known = y < n_known
    return X[known], y[known], X[~known], y[~known] - n_known
