import csv
from pathlib import Path

import pytest

from backfill.store import VINTAGE_HEADER, SignalId, VintageRecord, RevisionDataset


def write_vintages(path: Path, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VINTAGE_HEADER)
        w.writerows(rows)
    return path


def dataset_from(issues: dict[tuple[str, str, int], dict[int, float]], overrides=None) -> RevisionDataset:
    """{(region, feature, obs): {issue: value}} -> dataset."""
    recs = [VintageRecord(SignalId(r, f), w, t, v) for (r, f, w), iss in issues.items() for t, v in iss.items()]
    return RevisionDataset(recs, overrides)


@pytest.fixture
def vintage_file(tmp_path):
    def make(rows, name="v.csv"):
        return write_vintages(tmp_path / name, rows)
    return make


# one PASS/FAIL line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
