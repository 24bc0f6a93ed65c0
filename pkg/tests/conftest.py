import numpy as np
import pytest

from plhom.geometry import build_cell, build_perforated_mesh, build_periodic_cell_mesh


@pytest.fixture(scope="session")
def square_cell():
    return build_cell(2, "square")


@pytest.fixture(scope="session")
def square_cell_mesh(square_cell):
    return build_periodic_cell_mesh(square_cell, 1.0 / 32)


@pytest.fixture(scope="session")
def perforated16(square_cell):
    # 16 x 16 grid squares, 4 holes
    return build_perforated_mesh(square_cell, epsilon=0.25, target_h=1.0 / 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store the one-line outcome of an acceptance criterion."""

    def _record(key, ok, detail):
        ACCEPTANCE[key] = (bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[1])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
