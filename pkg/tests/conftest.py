import os
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(os.environ.get("ECA_DATA_DIR", "/root/data"))


def data_path(*parts) -> Path:
    return DATA_DIR.joinpath(*parts)


def require_data(*parts) -> Path:
    p = data_path(*parts)
    if not p.exists():
        pytest.skip(f"dataset not found at {p} (set ECA_DATA_DIR)")
    return p


def random_orthogonal(m, rng):
    Q, R = np.linalg.qr(rng.standard_normal((m, m)))
    return Q * np.sign(np.diag(R))


def random_unit_rows(n, m, rng):
    X = rng.standard_normal((n, m))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
