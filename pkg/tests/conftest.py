import numpy as np
import pytest

from kernelsplit.matrixio import save_csv


def make_blobs(n=400, d=2, gap=3.0, seed=0):
    """Two Gaussian blobs whose centres sit ``2 * gap`` apart along every axis.

    Points further than 0.9 * gap from their centre are redrawn, so the
    classes are separated by a margin of at least ``gap * (2 - 1.8)``
    along the centre line.
    """
    rng = np.random.default_rng(seed)
    labels = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    centres = labels[:, None] * gap / np.sqrt(d) * np.ones((n, d))
    noise = rng.normal(scale=0.5, size=(n, d))
    far = np.linalg.norm(noise, axis=1) > 0.9 * gap
    while far.any():
        noise[far] = rng.normal(scale=0.5, size=(far.sum(), d))
        far = np.linalg.norm(noise, axis=1) > 0.9 * gap
    return centres + noise, labels


@pytest.fixture
def blobs_csv(tmp_path):
    X, y = make_blobs()
    path = tmp_path / "blobs.csv"
    save_csv(path, X, y)
    return path


_VERDICTS: dict = {}


@pytest.fixture
def verdict(capsys):
    """Print a criterion's PASS/FAIL line, remember it, then assert."""

    def emit(number, title, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _VERDICTS[number] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
