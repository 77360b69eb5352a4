import pytest

from dispgrid.grid import AdminLevel, AdminUnit, GridSpec, rectangle

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def grid():
    return GridSpec()


@pytest.fixture
def local_grid():
    """Small grid anchored at (0, 0) for hand-checkable cell arithmetic."""
    return GridSpec(origin_lon=0.0, origin_lat=0.0, n_cols=10, n_rows=10)


def make_unit(uid, west, south, east, north, level=AdminLevel.ADMIN2, parent="P", country="TST", name=None):
    return AdminUnit(country, level, name or uid, uid, parent, rectangle(west, south, east, north))
