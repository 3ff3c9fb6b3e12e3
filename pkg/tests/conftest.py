import logging

import numpy as np
import pytest

from mdfa.core import AuditDataset


@pytest.fixture(autouse=True)
def _quiet_solvers():
    logging.getLogger("mdfa").setLevel(logging.ERROR)
    yield


def count_table(cells, X=None):
    """Dataset from {(x_key, s, y): count}; x_key is a scalar or tuple."""
    rows_x, rows_s, rows_y = [], [], []
    for (xk, s, y), n in cells.items():
        xk = xk if isinstance(xk, tuple) else (xk,)
        for _ in range(n):
            rows_x.append(xk)
            rows_s.append(s)
            rows_y.append(y)
    return AuditDataset(np.array(rows_x, dtype=float), rows_s, rows_y)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
