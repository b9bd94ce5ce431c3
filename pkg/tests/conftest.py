import csv
import warnings

import numpy as np
import pytest

from insider_stream.features import UserDayVector, load_schema
from insider_stream.ingest import SOURCE_COLUMNS, Source


@pytest.fixture(autouse=True)
def _quiet_tuning_warnings():
    # tiny test networks sit outside the documented tuning ranges on purpose
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*outside tuning range.*")
        yield


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture
def tiny_schema():
    return load_schema({
        "windows": [["00:00", "12:00"], ["12:00", "24:00"]],
        "descriptors": [
            {"source": "logon", "action": "Logon"},
            {"source": "logon", "action": "Logoff"},
            {"source": "device", "action": "Connect"},
        ],
        "categoricals": [{"name": "role", "cardinality": 3}],
    })


def write_source(path, source, rows):
    """Write a CERT-style CSV: ``rows`` are dicts keyed by column (missing -> empty)."""
    cols = SOURCE_COLUMNS[source]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i, r in enumerate(rows):
            r = {"id": f"{{{source.value}-{i}}}", **r}
            w.writerow([r.get(c, "") for c in cols])
    return path


def logon_rows(*pairs):
    return [{"date": d, "user": u, "pc": "PC-1", "activity": "Logon"} for d, u in pairs]


def make_days(n_users, n_days, dim, seed=0, cats=0):
    """Random Poisson count stream grouped by day, for trainer and baseline tests."""
    rng = np.random.default_rng(seed)
    rates = rng.gamma(2.0, 1.0, size=(n_users, dim))
    out = []
    for d in range(n_days):
        vecs = [UserDayVector(f"U{u:03d}", d, rng.poisson(rates[u]).astype(np.int64),
                              tuple([u % 2] * cats)) for u in range(n_users)]
        out.append((d, vecs))
    return out


__all__ = ["write_source", "logon_rows", "make_days", "record_criterion", "Source"]


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
