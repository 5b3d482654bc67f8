import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fedsense import taskgen


class ScriptedModel:
    """Stand-in device model that replays fixed estimates, one per row."""

    def __init__(self, column):
        self.column = np.asarray(column, dtype=np.int64)

    def predict(self, X):
        assert X.shape[0] == len(self.column)
        return self.column


@pytest.fixture(scope="session")
def std_dataset():
    return taskgen.generate(taskgen.GenSpec(n_tasks=1000, fake_fraction=0.11, rng_seed=42))


@pytest.fixture(scope="session")
def std_split(std_dataset):
    return taskgen.split(std_dataset, 800, 42)


_BASE = taskgen.generate(taskgen.GenSpec(n_tasks=256, rng_seed=0))


def make_tasks(labels, task_values):
    """Small Dataset with given labels and values; other fields are fixed."""
    n = len(labels)
    assert n <= len(_BASE)
    cols = {c: a[:n] for c, a in _BASE.cols.items()}
    cols["legitimacy"] = np.asarray(labels)
    cols["task_value"] = np.asarray(task_values)
    return taskgen.Dataset(cols)


# one PASS/FAIL line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
