import numpy as np
import pytest
from scipy.ndimage import uniform_filter


def textured(n, seed, size=3):
    """Blurred white noise scaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    w = uniform_filter(rng.standard_normal((n, n)), size, mode="wrap")
    return (w - w.min()) / (w.max() - w.min())


def roll_by(img, dx, dy):
    """Content moved by (dx, dy): out(x, y) = img(x - dx, y - dy)."""
    return np.roll(img, (dy, dx), axis=(0, 1))


@pytest.fixture
def texture():
    return textured(128, 1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
