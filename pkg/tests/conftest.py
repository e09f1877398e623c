import os

import numpy as np
import pytest

from grover_partition import instances

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        tr.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    npass = sum(1 for _, p, _ in ACCEPTANCE.values() if p)
    tr.write_line(f"{npass}/{len(ACCEPTANCE)} acceptance criteria pass")


def brute_force_imbalances(weights):
    """Independent reference: loop over bits of every basis index."""
    n = len(weights)
    out = np.empty(1 << n, dtype=np.int64)
    for x in range(1 << n):
        total = 0
        for i, a in enumerate(weights):
            total += -a if (x >> i) & 1 else a
        out[x] = total
    return out


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture(scope="session")
def small_instance():
    return instances.gen_instance(8, 8, 3)


def pytest_configure(config):
    os.environ.setdefault("GROVER_PARTITION_THREADS", "1")
