from pathlib import Path

import numpy as np
import pytest

from geosom.ingest import FeatureMatrix

DATA = Path(__file__).parent / "data"
FIXTURE = Path(__file__).resolve().parents[1] / "src" / "geosom" / "data"


def fm(values, kind="raw_percent", prefix="r"):
    values = np.asarray(values, dtype=float)
    n, m = values.shape
    return FeatureMatrix(
        tuple(f"{prefix}{i:03d}" for i in range(n)), tuple(f"f{j}" for j in range(m)), values, kind
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_dir():
    return FIXTURE


@pytest.fixture
def blobs_path():
    return DATA / "blobs3.csv"


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
