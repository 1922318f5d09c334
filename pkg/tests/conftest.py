import numpy as np
import pytest

from gu_crns import build_rect_mesh
from gu_crns.assembly import Assembler


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def unit8():
    return build_rect_mesh(1.0, 1.0, 8, 8)


@pytest.fixture(scope="session")
def asm8(unit8):
    return Assembler(unit8)


@pytest.fixture(scope="session")
def asm4():
    return Assembler(build_rect_mesh(1.0, 1.0, 4, 4))


_ACCEPTANCE = []


@pytest.fixture
def acceptance(capsys):
    """``record(k, ok, detail)`` prints one pass/fail line per criterion."""

    def record(k, ok, detail):
        line = f"CRITERION {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
