import os
from pathlib import Path

import numpy as np
import pytest

from memv.core import Dataset
from memv.io import load_csv

FOOD_ENV = "MEMV_FOOD_CSV"
FOOD_DEFAULT = Path(__file__).parent / "data" / "nutrition.csv"


def random_dataset(rng, n=None, m=None, noise=0.3):
    n = n or int(rng.integers(5, 201))
    m = m or int(rng.integers(1, 6))
    x = rng.normal(size=(n, m)) + rng.normal(size=m)
    c = rng.normal(size=m)
    y = x @ c + noise * rng.standard_normal(n)
    return Dataset(y, x + 0.1 * rng.standard_normal((n, m)))


def random_psd(rng, m, scale=0.05):
    A = rng.normal(size=(m, m))
    return scale * A @ A.T / m


def food_csv_path():
    path = Path(os.environ.get(FOOD_ENV, FOOD_DEFAULT))
    return path if path.is_file() else None


@pytest.fixture(scope="session")
def food_path():
    path = food_csv_path()
    if path is None:
        pytest.skip(f"food dataset not available; run scripts/fetch_food_data.py or set {FOOD_ENV}")
    full = load_csv(path, "Calories", ["Fat"])
    if full.n != 872:
        pytest.skip(f"food dataset at {path} has {full.n} rows, expected 872")
    return path


ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, passed: bool | None, detail: str = "") -> None:
    """Print and keep one status line per acceptance criterion."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    line = f"[{status}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
