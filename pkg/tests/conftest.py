import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from charcnn.dataset import write_idx  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def synthetic_idx(tmp_path):
    """Raw 64x64 IDX pair: 40 images over 4 classes, each class a distinct bright patch."""
    rng = np.random.default_rng(7)
    n, classes = 40, 4
    labels = np.arange(n) % classes
    images = rng.integers(0, 30, size=(n, 64, 64)).astype(np.uint8)
    for i, c in enumerate(labels):
        r, col = divmod(int(c), 2)
        images[i, 8 + 28 * r : 28 + 28 * r, 8 + 28 * col : 28 + 28 * col] = 230
    images_path = tmp_path / "raw-images.idx"
    labels_path = tmp_path / "raw-labels.idx"
    write_idx(images, images_path)
    write_idx(labels.astype(np.uint8), labels_path)
    return images_path, labels_path, images, labels


# ------------------------------------------------- acceptance criterion report

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            outcome = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            outcome = "SKIP"
        else:
            outcome = "FAIL"
        _criteria[number] = (outcome, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        outcome, title = _criteria[number]
        terminalreporter.write_line(f"[{outcome}] criterion {number:>2}: {title}")
