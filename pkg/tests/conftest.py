from __future__ import annotations

from pathlib import Path

import pytest


def write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def toy_csv(tmp_path):
    """Two groups in R^3 (a: 2 rows, b: 1 row) with labels a=1, b=2."""
    samples = write_text(tmp_path / "samples.csv", "group_id,x_1,x_2,x_3\na,0,1,2\nb,5,5,5\na,2,3,4\n")
    labels = write_text(tmp_path / "labels.csv", "group_id,y\na,1.0\nb,2.0\n")
    return samples, labels


# PASS/FAIL lines recorded by the acceptance suite, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
