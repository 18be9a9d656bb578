import numpy as np
import pytest

from imarker.imgcore import Frame, FrameFormat


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gray_frame(arr) -> Frame:
    return Frame(np.asarray(arr, dtype=np.uint8), FrameFormat.GRAY8)


def rgb_frame(arr) -> Frame:
    return Frame(np.asarray(arr, dtype=np.uint8), FrameFormat.RGB8)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
