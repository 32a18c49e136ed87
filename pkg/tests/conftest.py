from pathlib import Path

import pytest

from neuricam.imgcore import load_png

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"
NATURAL = ("camera", "astronaut", "coffee")


@pytest.fixture(scope="session")
def natural_rgb():
    return load_png(DATA / "astronaut_640x480.png")


@pytest.fixture(scope="session")
def natural_images():
    return {name: load_png(DATA / f"{name}_640x480.png") for name in NATURAL}


@pytest.fixture(scope="session")
def natural_gray_lr():
    return {name: load_png(DATA / f"{name}_160x120.png") for name in NATURAL}


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
